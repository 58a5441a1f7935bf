"""Change points, segment features, clustering, importance and evaluation"""

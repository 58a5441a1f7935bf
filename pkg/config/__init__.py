"""Process settings and experiment configuration"""

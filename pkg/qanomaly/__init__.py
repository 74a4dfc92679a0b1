"""
qanomaly: driven random-matrix simulator for energy spreading and anomalous diffusion
"""
__version__ = "1.0.0"

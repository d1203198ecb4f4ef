"""Remote beamforming inference: predict a traffic BS's best beam from control-BS CSI."""

__version__ = "0.1.0"

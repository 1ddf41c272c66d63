"""WiFi CSI home sensing: channel simulation, ACF motion and speed sensing,
subject identification, device quality scoring and multi-node topology."""

__version__ = "0.1.0"

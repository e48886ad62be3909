import os
import platform

from utils.log import get_logger

logger = get_logger(__name__)

# The primary and fallback paths for the machine-id file
MACHINE_ID_PATH = "/etc/machine-id"
MACHINE_ID_FALLBACK_PATH = "/var/lib/dbus/machine-id"


def get_device_uuid():
    """
    Retrieves a stable host ID from the system's machine-id file, so run
    manifests can tell which machine produced an artifact.
    """
    try:
        if os.path.exists(MACHINE_ID_PATH):
            path_to_read = MACHINE_ID_PATH
        elif os.path.exists(MACHINE_ID_FALLBACK_PATH):
            path_to_read = MACHINE_ID_FALLBACK_PATH
        else:
            return "unknown_uuid"
        with open(path_to_read, "r") as f:
            return f.read().strip()
    except OSError as e:
        logger.warning(f"⚠️ Could not read device UUID: {e}")
        return "unknown_uuid_error"


def get_device_name():
    return platform.node() or "unknown_host"


def get_host_identity():
    return {
        "device_id": get_device_uuid(),
        "device_name": get_device_name(),
        "platform": platform.platform(),
        "python": platform.python_version(),
    }

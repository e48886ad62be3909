import psutil

from utils.device_info import get_host_identity
from utils.log import get_logger

logger = get_logger(__name__)

# Path to the file containing the CPU temperature
TEMP_FILE_PATH = "/sys/class/thermal/thermal_zone0/temp"


def get_cpu_temperature():
    """Reads the CPU temperature in Celsius, or None where the sensor is absent."""
    try:
        with open(TEMP_FILE_PATH, "r") as f:
            temperature_milli_c = int(f.read().strip())
            return round(temperature_milli_c / 1000.0, 1)
    except (IOError, ValueError):
        return None


def get_health_report(path="."):
    """
    Host section of a run manifest: identity plus a resource snapshot taken
    without blocking (CPU percent is measured since the previous call).
    """
    report = get_host_identity()
    try:
        memory = psutil.virtual_memory()
        report.update(
            {
                "cpu_count": psutil.cpu_count(logical=True),
                "cpu_usage_percent": psutil.cpu_percent(interval=None),
                "memory_total_mb": round(memory.total / (1024 * 1024), 1),
                "memory_usage_percent": memory.percent,
                "disk_usage_percent": psutil.disk_usage(path).percent,
                "cpu_temperature_c": get_cpu_temperature(),
            }
        )
    except (OSError, psutil.Error) as e:
        logger.warning(f"⚠️ Could not retrieve host resources: {e}")
        report["error"] = str(e)
    return report

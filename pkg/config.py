"""
Configuration settings for the celldir CLI tool.
Training, data, TTA and gradient-check defaults with optional per-user overrides.
"""

import click
import copy
import os
from pathlib import Path

import yaml

# Optional dotenv support
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass


# ============================================================================
# CELLDIR CONFIGURATION
# ============================================================================

# Directory structure (CELLDIR_HOME is the only environment variable read)
CELLDIR_DIR = Path(os.environ.get("CELLDIR_HOME", str(Path.home() / ".celldir")))
USAGE_DIR = CELLDIR_DIR / "usage"
CONFIG_FILE = CELLDIR_DIR / "config.yaml"

DEFAULT_CONFIG = {
    "training": {
        "epochs": 12,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "optimizer": "adam",
        "augment_multiplier": 2,
        "scale": "desk",
        "folds": 4
    },
    "optimizers": {
        "adam": {
            "beta1": 0.9,
            "beta2": 0.999,
            "epsilon": 1e-8
        },
        "sgd": {
            "momentum": 0.9
        }
    },
    "data": {
        "size": 64,
        "count": 2000,
        "preset": "standard"
    },
    "tta": {
        "grid": [1, 2, 6, 10, 14],
        "seed": 0
    },
    "gradcheck": {
        "input_size": 32,
        "step": 1e-5,
        "tolerance": 1e-4,
        "atol": 1e-9,
        "margin": 1e-3,
        "attempts": 5
    },
    "sweep": {
        "jobs": 1
    }
}

# ============================================================================
# CELLDIR CONFIGURATION CLASS
# ============================================================================

class CellDirConfig:
    """Layered configuration: built-in defaults with the user's YAML file merged on top"""

    def __init__(self, config_path=None):
        self.config_path = Path(config_path) if config_path else CONFIG_FILE
        self.config = self.load_config()

    def load_config(self):
        """Load configuration from file or fall back to defaults"""
        config = copy.deepcopy(DEFAULT_CONFIG)
        if self.config_path.exists():
            try:
                with open(self.config_path, 'r') as f:
                    loaded_config = yaml.safe_load(f) or {}

                # Merge with default config to ensure all keys exist
                self._deep_merge(config, loaded_config)

            except yaml.YAMLError as e:
                click.echo(f"⚠️ Warning: Could not load config file: {e}", err=True)
                click.echo("Using default configuration.", err=True)
        return config

    def _deep_merge(self, base_dict, update_dict):
        """Deep merge two dictionaries"""
        for key, value in update_dict.items():
            if key in base_dict and isinstance(base_dict[key], dict) and isinstance(value, dict):
                self._deep_merge(base_dict[key], value)
            else:
                base_dict[key] = value

    def save_config(self):
        """Save configuration to file"""
        self.config_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.config_path, 'w') as f:
            yaml.dump(self.config, f, default_flow_style=False)

    def get(self, key, default=None):
        """Get configuration value with dot notation support"""
        keys = key.split('.')
        value = self.config

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def set(self, key, value):
        """Set configuration value with dot notation support"""
        keys = key.split('.')
        config_ref = self.config

        # Navigate to the parent of the target key
        for k in keys[:-1]:
            if k not in config_ref:
                config_ref[k] = {}
            config_ref = config_ref[k]

        config_ref[keys[-1]] = value

    def validate(self):
        """Validate configuration and return errors/warnings"""
        errors = []
        warnings = []

        if self.get("training.scale") not in ("desk", "paper"):
            errors.append(f"training.scale must be 'desk' or 'paper', got {self.get('training.scale')!r}")

        if self.get("training.optimizer") not in ("adam", "sgd"):
            errors.append(f"training.optimizer must be 'adam' or 'sgd', got {self.get('training.optimizer')!r}")

        if self.get("data.size") not in (32, 64, 128):
            errors.append("data.size must be one of 32, 64, 128")

        if int(self.get("training.folds", 4)) < 1:
            errors.append("training.folds must be at least 1")

        if self.get("training.scale") == "paper":
            warnings.append("Paper-scale networks have ~7.4M parameters; training on CPU is slow.")

        grid = self.get("tta.grid", [])
        if not grid or any(int(n) < 1 for n in grid):
            errors.append("tta.grid must be a non-empty list of positive integers")

        return errors, warnings

# ============================================================================
# HELPER FUNCTIONS
# ============================================================================

def get_config():
    """Get a CellDirConfig instance"""
    return CellDirConfig()

def get_config_value(key, default=None):
    """Quick access to configuration values"""
    config = get_config()
    return config.get(key, default)

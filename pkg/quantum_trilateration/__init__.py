from .config import load_env_file

load_env_file()

from .config import get_config, load_config
from .main import main
from .pipeline import cmd_collect, cmd_eval, cmd_finetune, cmd_fit, cmd_halfmoons, cmd_pretrain

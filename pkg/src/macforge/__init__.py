"""Composable wireless MAC protocols, a DCF/ALOHA simulator, and a PPO block selector."""

__version__ = "0.1.0"

# 低ランク行列復元 (二乗Fノルム正則化因子分解) src モジュール
__version__ = "0.3.0"

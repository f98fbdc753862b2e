# objective モジュール (損失・因子分解目的関数・対角フレーム)

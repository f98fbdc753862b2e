# sampling モジュール (観測モデル)

# expcli モジュール (実験ハーネスと CLI 補助)

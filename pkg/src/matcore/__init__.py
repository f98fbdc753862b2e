# matcore モジュール (行列プリミティブ)

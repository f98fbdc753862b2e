# solvers モジュール (AAL 交互最小化と APG 核ノルム基準解法)

# theory モジュール (誤差限界・臨界点・KL性の数値監査)

"""
null 効果の広がり τ² を推定し、強いシグナルを検出するための統計ライブラリ
"""

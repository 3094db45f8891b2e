"""シミュレーション（シナリオ生成と実験ドライバー）"""

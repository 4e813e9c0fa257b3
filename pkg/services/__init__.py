"""
Сервисы платформы: ядро симуляции, CMW, IDS, NSS, оркестрация и эксперименты
"""

"""
Данные: профили абонентов (HSS) и хранилище измерений
"""

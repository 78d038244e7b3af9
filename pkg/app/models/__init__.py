"""
Program DSL, environment, networks, TD3, Lipschitz feedback and the search loop
"""

# Simulation, theory and analysis services

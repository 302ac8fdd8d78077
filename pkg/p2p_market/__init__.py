# P2P Market Engine

# Command modules for the tire force estimation CLI

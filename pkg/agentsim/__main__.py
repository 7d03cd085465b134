"""
Entry point for python -m agentsim
Goes straight to the CLI without importing the simulator up front.
"""

if __name__ == '__main__':
    from agentsim.cli import cli
    cli()

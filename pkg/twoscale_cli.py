from twoscale.src.scripts.cli import app

if __name__ == "__main__":
    app()

from app.commands import bench, evaluate, simulate, stream, synth_data, train

COMMANDS = (synth_data, train, evaluate, simulate, stream, bench)

__all__ = [
    "COMMANDS",
]

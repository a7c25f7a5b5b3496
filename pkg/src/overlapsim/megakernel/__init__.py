from .builders import (
    BuiltGraph,
    InputDependencyDesc,
    MkTensor,
    OutputTilingDesc,
    build_task_graph,
    get_task_builder,
    register_task_builder,
    registered_ops,
)
from .encoding import (
    INT_PER_DEPS,
    INT_PER_TASK,
    MAX_IO_TENSORS,
    MAX_NUM_TENSOR_DIMS,
    IoSlot,
    TaskRecord,
    decode_task,
    deps_from_bytes,
    deps_to_bytes,
    dump_task_graph,
    encode_task,
    encode_work_queues,
    fetch_task,
    queues_from_bytes,
    queues_to_bytes,
)
from .runner import DeviceProp, MegaProgram, MegaRun, run_megakernel
from .scoreboard import Scoreboard

__all__ = [
    "BuiltGraph", "InputDependencyDesc", "MkTensor", "OutputTilingDesc",
    "build_task_graph", "get_task_builder", "register_task_builder", "registered_ops",
    "INT_PER_DEPS", "INT_PER_TASK", "MAX_IO_TENSORS", "MAX_NUM_TENSOR_DIMS",
    "IoSlot", "TaskRecord", "decode_task", "deps_from_bytes", "deps_to_bytes",
    "dump_task_graph", "encode_task", "encode_work_queues", "fetch_task",
    "queues_from_bytes", "queues_to_bytes",
    "DeviceProp", "MegaProgram", "MegaRun", "run_megakernel", "Scoreboard",
]

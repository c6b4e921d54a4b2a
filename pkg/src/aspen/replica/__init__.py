from aspen.replica.engine import Mode, Replica
from aspen.replica.merge import InconsistentHistory, NewLog, construct_new_log
from aspen.replica.state import ExecState

__all__ = ["ExecState", "InconsistentHistory", "Mode", "NewLog", "Replica", "construct_new_log"]

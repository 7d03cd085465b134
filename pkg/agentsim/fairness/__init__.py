"""Tenant fairness: urgency, epoch allocation, preemption and SLO accounting."""

from agentsim.fairness.afs import AfsState, afs_score, allocate_epoch, task_urgency, work_remain
from agentsim.fairness.preemption import PreemptAction, maybe_preempt
from agentsim.fairness.slo import fairness_deviation, slo_attainment

"""Collaborative remote laboratory orchestration.

Organization (courses, groups, lab setups), quota-constrained slot booking,
a VM pool with immutable-image reset, shared-focus remote desktop relaying,
group chat / hardware / camera / conference services, and an HTTP+WebSocket
gateway in front of it all.  External integrations (hypervisor, desktop
server, conference, camera, lab hardware) are driver interfaces with
simulated implementations, so the whole platform runs hermetically.
"""

__version__ = "0.1.0"

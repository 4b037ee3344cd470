"""Digital twin of a master-follower robotic catheterization platform.

The follower drives a tendon-driven catheter in three degrees of
freedom: translation along the feed axis, rotation about it, and a
bending knob that reaches the tip through a dead zone, a backlash play
operator, and direction-dependent gains before a Cosserat rod solve.
Around that core live the bench characterization arithmetic, the
clutched master and CRC-framed UDP follower link, trajectory scenarios
with per-plane tracking metrics, a JSON/WebSocket console bridge, and
the ``cathsim`` command line.
"""

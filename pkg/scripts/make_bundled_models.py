"""Regenerate the bundled kinematic model descriptions in src/mocapvi/data/.

World frame is z-up; the neutral body faces +x with +y to its left.
"""
import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "mocapvi" / "data"
Y = [0.0, 1.0, 0.0]
X = [1.0, 0.0, 0.0]
Z = [0.0, 0.0, 1.0]


def seg(name, parent, offset, scale):
    return {"name": name, "parent": parent, "offset": offset, "scale_param": scale}


def hinge(name, segment, axis, lo, hi):
    return {"name": name, "segment": segment, "type": "hinge", "axis": axis, "lower": lo, "upper": hi}


def ball(name, segment, lo, hi):
    return {"name": name, "segment": segment, "type": "ball_euler", "lower": lo, "upper": hi}


def site(name, segment, offset):
    return {"name": name, "segment": segment, "offset": offset}


def humanoid_lite():
    segments = [
        seg("pelvis", None, [0.0, 0.0, 0.0], 0),
        seg("torso", "pelvis", [0.0, 0.0, 0.10], 1),
        seg("head", "torso", [0.0, 0.0, 0.50], 1),
        seg("l_upperarm", "torso", [0.0, 0.19, 0.42], 3),
        seg("r_upperarm", "torso", [0.0, -0.19, 0.42], 3),
        seg("l_thigh", "pelvis", [0.0, 0.09, -0.05], 2),
        seg("l_shank", "l_thigh", [0.0, 0.0, -0.42], 2),
        seg("r_thigh", "pelvis", [0.0, -0.09, -0.05], 2),
        seg("r_shank", "r_thigh", [0.0, 0.0, -0.42], 2),
    ]
    joints = [
        {"name": "pelvis", "segment": "pelvis", "type": "free_root"},
        ball("lumbar", "torso", [-0.5, -0.6, -0.6], [0.5, 0.9, 0.6]),
        hinge("neck_flexion", "head", Y, -0.7, 0.7),
        hinge("l_shoulder_flexion", "l_upperarm", Y, -1.2, 1.2),
        hinge("r_shoulder_flexion", "r_upperarm", Y, -1.2, 1.2),
        hinge("l_hip_flexion", "l_thigh", Y, -1.2, 0.6),
        hinge("l_knee_flexion", "l_shank", Y, -0.1, 2.0),
        hinge("r_hip_flexion", "r_thigh", Y, -1.2, 0.6),
        hinge("r_knee_flexion", "r_shank", Y, -0.1, 2.0),
    ]
    sites = [
        site("l_asis", "pelvis", [0.06, 0.11, 0.02]),
        site("r_asis", "pelvis", [0.06, -0.11, 0.02]),
        site("sacrum", "pelvis", [-0.09, 0.0, 0.04]),
        site("c7", "torso", [-0.06, 0.0, 0.48]),
        site("sternum", "torso", [0.09, 0.0, 0.35]),
        site("l_acromion", "torso", [0.0, 0.19, 0.44]),
        site("r_acromion", "torso", [0.0, -0.19, 0.44]),
        site("head_top", "head", [0.0, 0.0, 0.22]),
        site("l_ear", "head", [0.0, 0.07, 0.10]),
        site("r_ear", "head", [0.0, -0.07, 0.10]),
        site("l_elbow", "l_upperarm", [0.0, 0.0, -0.30]),
        site("r_elbow", "r_upperarm", [0.0, 0.0, -0.30]),
        site("l_thigh_front", "l_thigh", [0.07, 0.02, -0.20]),
        site("l_knee", "l_thigh", [0.0, 0.05, -0.42]),
        site("r_thigh_front", "r_thigh", [0.07, -0.02, -0.20]),
        site("r_knee", "r_thigh", [0.0, -0.05, -0.42]),
        site("l_ankle", "l_shank", [0.0, 0.04, -0.42]),
        site("l_heel", "l_shank", [-0.05, 0.0, -0.47]),
        site("r_ankle", "r_shank", [0.0, -0.04, -0.42]),
        site("r_heel", "r_shank", [-0.05, 0.0, -0.47]),
    ]
    return {"format": "mocapvi.kinematic_model", "version": 1, "name": "humanoid-lite",
            "scale_param_count": 4, "segments": segments, "joints": joints, "sites": sites}


def paper_scale():
    # scale groups: 0 pelvis, 1 torso, 2 head, 3 femur, 4 tibia, 5 foot, 6 humerus, 7 forearm/hand
    segments = [seg("pelvis", None, [0.0, 0.0, 0.0], 0),
                seg("torso", "pelvis", [0.0, 0.0, 0.10], 1),
                seg("head", "torso", [0.0, 0.0, 0.50], 2)]
    joints = [{"name": "pelvis", "segment": "pelvis", "type": "free_root"},
              ball("lumbar", "torso", [-0.5, -0.6, -0.6], [0.5, 0.9, 0.6]),
              ball("neck", "head", [-0.6, -0.7, -1.0], [0.6, 0.7, 1.0])]
    for side, sy in (("l", 1.0), ("r", -1.0)):
        segments += [
            seg(f"{side}_femur", "pelvis", [0.0, sy * 0.09, -0.05], 3),
            seg(f"{side}_tibia", f"{side}_femur", [0.0, 0.0, -0.42], 4),
            seg(f"{side}_talus", f"{side}_tibia", [0.0, 0.0, -0.42], 5),
            seg(f"{side}_calcn", f"{side}_talus", [-0.02, 0.0, -0.03], 5),
            seg(f"{side}_toes", f"{side}_calcn", [0.17, 0.0, -0.02], 5),
            seg(f"{side}_humerus", "torso", [0.0, sy * 0.19, 0.42], 6),
            seg(f"{side}_ulna", f"{side}_humerus", [0.0, 0.0, -0.30], 7),
            seg(f"{side}_radius", f"{side}_ulna", [0.0, 0.0, -0.02], 7),
            seg(f"{side}_lunate", f"{side}_radius", [0.0, 0.0, -0.24], 7),
            seg(f"{side}_hand", f"{side}_lunate", [0.0, 0.0, -0.02], 7),
        ]
        joints += [
            ball(f"{side}_hip", f"{side}_femur", [-0.8, -1.6, -0.8], [0.8, 0.6, 0.8]),
            hinge(f"{side}_knee", f"{side}_tibia", Y, -0.1, 2.3),
            hinge(f"{side}_ankle", f"{side}_talus", Y, -0.7, 0.9),
            hinge(f"{side}_subtalar", f"{side}_calcn", X, -0.6, 0.6),
            hinge(f"{side}_mtp", f"{side}_toes", Y, -0.5, 1.0),
            ball(f"{side}_shoulder", f"{side}_humerus", [-1.5, -2.0, -1.5], [1.5, 2.5, 1.5]),
            hinge(f"{side}_elbow", f"{side}_ulna", Y, -2.4, 0.05),
            hinge(f"{side}_pro_sup", f"{side}_radius", Z, -1.5, 1.5),
            hinge(f"{side}_wrist_flex", f"{side}_lunate", Y, -1.2, 1.2),
            hinge(f"{side}_wrist_dev", f"{side}_hand", X, -0.4, 0.6),
        ]
    sites = []
    # four sites per bone along its length, offset around the shaft
    ring = [[0.03, 0.0], [0.0, 0.03], [-0.03, 0.0], [0.0, -0.03]]
    lengths = {"pelvis": -0.1, "torso": 0.5, "head": 0.22, "femur": -0.42, "tibia": -0.42,
               "talus": -0.05, "calcn": -0.03, "toes": -0.02, "humerus": -0.30, "ulna": -0.02,
               "radius": -0.24, "lunate": -0.02, "hand": -0.15}
    per_seg = {"pelvis": 8, "torso": 12, "head": 5, "femur": 4, "tibia": 4, "talus": 2, "calcn": 3,
               "toes": 2, "humerus": 4, "ulna": 2, "radius": 4, "lunate": 2, "hand": 4}
    for s in segments:
        base = s["name"].split("_", 1)[-1]
        n = per_seg[base]
        length = lengths[base]
        for k in range(n):
            frac = (k + 1) / (n + 1)
            dx, dy = ring[k % 4]
            sites.append(site(f"{s['name']}_m{k}", s["name"], [dx, dy, round(frac * length, 4)]))
    return {"format": "mocapvi.kinematic_model", "version": 1, "name": "paper-scale",
            "scale_param_count": 8, "segments": segments, "joints": joints, "sites": sites}


if __name__ == "__main__":
    for fname, d in (("humanoid_lite.json", humanoid_lite()), ("paper_scale.json", paper_scale())):
        (OUT / fname).write_text(json.dumps(d, indent=1) + "\n")
        print(fname, "sites:", len(d["sites"]))

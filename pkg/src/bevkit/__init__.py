"""BEV 3D detection toolkit: voxels, anchors, box coding, rotated IoU/NMS, losses,
an attention micro-network and KITTI-style evaluation."""
from bevkit._backend import BACKEND
from bevkit.boxes import Box3D, normalize_angle
from bevkit.codec import DirectionLabel, RegressionTarget, decode, direction_label, encode
from bevkit.geometry import bev_corners, iou_3d, iou_matrix, nms, rotated_iou_bev

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Box3D", "normalize_angle", "DirectionLabel", "RegressionTarget", "decode",
    "direction_label", "encode", "bev_corners", "iou_3d", "iou_matrix", "nms", "rotated_iou_bev",
]

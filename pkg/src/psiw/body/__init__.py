from psiw.body.model import (
    DIM, BETA_SLICE, LOCAL_SLICE, R_SLICE, T_SLICE, THETA_B_SLICE, THETA_H_SLICE,
    BodyParams, body_mesh, body_vertices, contact_vertices, pose_decode, transform_to_world,
)
from psiw.body.rotation import axis_angle_to_matrix, matrix_to_rot6d, rot6d_to_matrix
from psiw.body.template import (
    DEFAULT_CONTACT_PARTS, PART_LABELS, BodyTemplate, build_template,
)

__all__ = [
    "DIM", "BETA_SLICE", "LOCAL_SLICE", "R_SLICE", "T_SLICE", "THETA_B_SLICE", "THETA_H_SLICE",
    "BodyParams", "body_mesh", "body_vertices", "contact_vertices", "pose_decode", "transform_to_world",
    "axis_angle_to_matrix", "matrix_to_rot6d", "rot6d_to_matrix",
    "DEFAULT_CONTACT_PARTS", "PART_LABELS", "BodyTemplate", "build_template",
]

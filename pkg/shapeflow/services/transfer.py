"""
Correspondence transfer: per-point contact maps and sparse keypoints carried
from the template onto the deformed shape through the point index.
"""

from dataclasses import dataclass

import numpy as np

from core.errors import CorrespondenceError, InvalidGeometry
from core.geometry import CloudLike, PointCloud, as_points

from ..utils import logger


@dataclass(frozen=True)
class ContactField:
    """Contact probability per template point."""
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size and (not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0):
            raise InvalidGeometry("Contact values must lie within [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return int(self.values.shape[0])


def _field(field, n: int) -> np.ndarray:
    d = np.asarray(as_points(field), dtype=np.float64).reshape(-1, 3)
    if d.shape[0] != n:
        raise CorrespondenceError(f"Deformation field has {d.shape[0]} vectors for {n} template points")
    return d


def transfer_contact_map(field: CloudLike, template: PointCloud, contact: ContactField) -> tuple[PointCloud, ContactField]:
    """(template + field, same contact values): the contact map rides on the point index."""
    n = len(template)
    if len(contact) != n:
        raise CorrespondenceError(f"Contact map has {len(contact)} values for {n} template points")
    deformed = template.with_points(template.points + _field(field, n))
    logger.debug(f"Transferred contact map over {n} points (max {contact.values.max(initial=0.0):.3f})")
    return deformed, ContactField(contact.values.copy())


def transfer_keypoints(field: CloudLike, template: PointCloud, keypoints) -> np.ndarray:
    """Move each keypoint by the displacement of its nearest template point (lowest index on ties)."""
    d = _field(field, len(template))
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 3)
    if kp.shape[0] == 0:
        return kp.copy()
    diff = kp[:, None, :] - template.points[None, :, :]
    nearest = np.argmin(np.sum(diff * diff, axis=-1), axis=1)
    return kp + d[nearest]

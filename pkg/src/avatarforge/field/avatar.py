"""The implicit avatar: a signed distance net and two color nets."""

from __future__ import annotations

import numpy as np

from ..diffmath import (
    Mlp, Tensor, container, exp, no_grad, positional_encode,
    positional_encode_raw,
)
from ..errors import FormatError


class AvatarField:
    """Signed distance network plus template and stylized color networks.

    The sharpness of the rendering kernel is stored as the log of the
    actual value, so it stays positive no matter what the optimizer does.
    The template color net reconstructs the initialization geometry's
    look; the stylized net carries the generated appearance.
    """

    def __init__(self, seed: int = 0, hidden: int = 32, sdf_bands: int = 6,
                 color_bands: int = 4, bound: float = 1.1, s_init: float = 32.0):
        self.seed = int(seed)
        self.hidden = int(hidden)
        self.sdf_bands = int(sdf_bands)
        self.color_bands = int(color_bands)
        self.bound = float(bound)
        sdf_in = 3 + 6 * sdf_bands
        color_in = 3 + 6 * color_bands
        h = self.hidden
        self.f = Mlp([sdf_in, h, h, h, h, h, 1],
                     hidden_activation="softplus", seed=seed)
        self.c = Mlp([color_in, h, h, h, 3], hidden_activation="relu",
                     output_activation="sigmoid", seed=seed + 1)
        self.c_c = Mlp([color_in, h, h, h, 3], hidden_activation="relu",
                       output_activation="sigmoid", seed=seed + 2)
        # Bias the distance net positive so the field starts mostly empty;
        # surfaces then grow where the data pulls them in.
        self.f.biases[-1].data = np.array([0.3])
        self.log_s = Tensor(np.array(np.log(s_init)), requires_grad=True)
        self.step = 0

    # ------------------------------------------------------------- access
    def s(self) -> Tensor:
        return exp(self.log_s)

    def s_value(self) -> float:
        return float(np.exp(self.log_s.data))

    def parameters(self, parts=("f", "c", "c_c", "s")) -> list:
        out = []
        if "f" in parts:
            out.extend(self.f.parameters())
        if "c" in parts:
            out.extend(self.c.parameters())
        if "c_c" in parts:
            out.extend(self.c_c.parameters())
        if "s" in parts:
            out.append(self.log_s)
        return out

    def reset_stylized(self, seed: int | None = None) -> None:
        """Fresh random stylized color net (start of the sculpting stage)."""
        seed = self.seed + 2 if seed is None else seed
        self.c_c = Mlp([3 + 6 * self.color_bands] + [self.hidden] * 3 + [3],
                       hidden_activation="relu", output_activation="sigmoid",
                       seed=seed)

    # ------------------------------------------------------------ queries
    def sdf(self, points: Tensor) -> Tensor:
        enc = positional_encode(points, self.sdf_bands)
        return self.f.forward(enc)

    def sdf_raw(self, points: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.f.forward_raw(
                positional_encode_raw(points, self.sdf_bands)).reshape(-1)

    def color_raw(self, points: np.ndarray, which: str = "stylized") -> np.ndarray:
        net = self.c_c if which == "stylized" else self.c
        return net.forward_raw(
            positional_encode_raw(points, self.color_bands))

    # --------------------------------------------------------- checkpoint
    def save(self, path) -> None:
        header = {
            "kind": "avatar-field",
            "seed": self.seed,
            "hidden": self.hidden,
            "sdf_bands": self.sdf_bands,
            "color_bands": self.color_bands,
            "bound": self.bound,
            "step": self.step,
        }
        arrays = {"log_s": self.log_s.data.reshape(1)}
        for name, net in (("f", self.f), ("c", self.c), ("c_c", self.c_c)):
            for i, arr in enumerate(net.state_arrays()):
                arrays[f"{name}.{i}"] = arr
        container.save_container(path, container.FIELD_MAGIC, header, arrays)

    @classmethod
    def load(cls, path) -> "AvatarField":
        header, arrays = container.load_container(path, container.FIELD_MAGIC)
        if header.get("kind") != "avatar-field":
            raise FormatError(f"{path}: not an avatar-field checkpoint")
        field = cls(seed=header["seed"], hidden=header["hidden"],
                    sdf_bands=header["sdf_bands"],
                    color_bands=header["color_bands"], bound=header["bound"])
        for name, net in (("f", field.f), ("c", field.c), ("c_c", field.c_c)):
            count = len(net.parameters())
            net.load_state_arrays([arrays[f"{name}.{i}"] for i in range(count)])
        field.log_s.data = arrays["log_s"].reshape(())
        field.step = int(header.get("step", 0))
        return field

    def snapshot_arrays(self) -> list:
        return [p.data.copy() for p in self.parameters()]

    def restore_arrays(self, arrays: list) -> None:
        for p, a in zip(self.parameters(), arrays):
            p.data = a.copy()

from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ratslam.errors import ConfigError
from ratslam.utils.kvfile import format_kv, parse_assignment, parse_kv_text, read_kv_file


DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "default.cfg"


class RunConfig(BaseModel):
    """Every tunable parameter of a run.

    Local-view, pose-cell and experience-map defaults are the values used on the
    lake dataset; the kernel shape, global and peak inhibition are implementation
    choices. Immutable once loaded.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    # local view
    image_crop_x_min: int = Field(40, ge=0, description="First image column kept (inclusive)")
    image_crop_x_max: int = Field(600, ge=1, description="Last image column kept (exclusive)")
    image_crop_y_min: int = Field(150, ge=0, description="First image row kept; excludes the water surface")
    image_crop_y_max: int = Field(300, ge=1, description="Last image row kept (exclusive)")
    template_x_size: int = Field(60, ge=1, description="Template columns")
    template_y_size: int = Field(20, ge=1, description="Template rows")
    vt_shift_match: int = Field(25, ge=0, description="Largest horizontal comparison shift, template columns")
    vt_step_match: int = Field(5, ge=1, description="Shift stride, template columns")
    vt_match_threshold: float = Field(
        0.073, ge=0.0,
        description="Mean absolute difference accepted as a match; 0.01-0.03 for repetitive scenes, 0.05-0.1 tolerant",
    )
    vt_normalisation: float = Field(0.0, ge=0.0, description="Global brightness normalisation strength, 0 = off; >2 saturates")
    vt_patch_normalise: int = Field(2, ge=0, description="Patch normalisation radius in template cells, 0 = off")
    vt_panoramic: int = Field(0, description="1 wraps columns during comparison")

    # pose cells
    pc_dim_xy: int = Field(18, ge=1, description="Pose-cell grid side in x' and y'")
    pc_dim_th: int = Field(36, ge=1, description="Pose-cell grid depth in theta'")
    pc_cell_x_size: float = Field(1.0, gt=0.0, description="Metres per pose cell; ideally one cell per step")
    pc_vt_inject_energy: float = Field(0.2, ge=0.0, description="Visual injection gain; 0.05-0.2")
    pc_vt_restore: float = Field(0.05, ge=0.0, description="Per-step template activity decay")
    vt_active_decay: float = Field(1.0, ge=0.0, description="Activity added per template activation; 0.3-0.8 dynamic, up to 1.5 static")
    pc_w_e_dim: int = Field(7, ge=1, description="Excitation kernel side, odd")
    pc_w_i_dim: int = Field(5, ge=1, description="Inhibition kernel side, odd")
    pc_sigma_e: float = Field(1.0, description="Excitation kernel std dev, cells")
    pc_sigma_i: float = Field(2.0, description="Inhibition kernel std dev, cells")
    pc_global_inhibit: float = Field(0.00002, ge=0.0, description="Constant subtracted from every cell per step")
    pc_peak_inhibit: float = Field(
        0.1, ge=0.0, lt=1.0, description="Fraction of the strongest cell subtracted from every cell per step"
    )

    # experience map
    exp_delta_pc_threshold: float = Field(2.0, gt=0.0, description="Pose-cell distance that creates a new experience")
    exp_loops: int = Field(50, description="Relaxation iterations per map update")
    exp_correction: float = Field(0.5, description="Relaxation correction rate alpha")
    exp_initial_em_deg: float = Field(180.0, description="Heading of the first experience, degrees")
    exp_view_mismatch_scale: float = Field(10.0, gt=0.0, description="View mismatch weight as a multiple of pc_dim_xy")

    # ingest
    gt_join_window: float = Field(0.75, gt=0.0, description="Max seconds between a frame and its ground-truth fix")
    image_resize_width: int = Field(0, ge=0, description="Resize frames on load, 0 = keep")
    image_resize_height: int = Field(0, ge=0, description="Resize frames on load, 0 = keep")

    @field_validator("vt_panoramic")
    @classmethod
    def _flag(cls, v: int) -> int:
        if v not in (0, 1):
            raise ValueError("vt_panoramic must be 0 or 1")
        return v

    @model_validator(mode="after")
    def _check_invariants(self) -> "RunConfig":
        if not self.image_crop_x_min < self.image_crop_x_max:
            raise ValueError("crop bounds: image_crop_x_min must be < image_crop_x_max")
        if not self.image_crop_y_min < self.image_crop_y_max:
            raise ValueError("crop bounds: image_crop_y_min must be < image_crop_y_max")
        for name in ("pc_w_e_dim", "pc_w_i_dim"):
            dim = getattr(self, name)
            if dim % 2 == 0:
                raise ValueError(f"{name} must be odd, got {dim}")
            if dim > self.pc_dim_xy or dim > self.pc_dim_th:
                raise ValueError(f"{name}={dim} exceeds the pose-cell grid ({self.pc_dim_xy}x{self.pc_dim_xy}x{self.pc_dim_th})")
        if not self.pc_sigma_e > 0:
            raise ValueError("pc_sigma_e must be positive")
        if not self.pc_sigma_i > self.pc_sigma_e:
            raise ValueError("pc_sigma_i must be larger than pc_sigma_e")
        if not 0.0 < self.exp_correction <= 1.0:
            raise ValueError("exp_correction must lie in (0, 1]")
        if self.exp_loops < 1:
            raise ValueError("exp_loops must be >= 1")
        if (self.image_resize_width == 0) != (self.image_resize_height == 0):
            raise ValueError("image_resize_width and image_resize_height must be set together")
        return self

    @property
    def view_mismatch_weight(self) -> float:
        return self.exp_view_mismatch_scale * self.pc_dim_xy

    @property
    def excite_radius(self) -> int:
        return (self.pc_w_e_dim - 1) // 2


def _validate(values: Dict[str, str], source: str) -> RunConfig:
    unknown = sorted(set(values) - set(RunConfig.model_fields))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s): {', '.join(unknown)}")
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"{source}: {problems}") from e


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    return _validate(parse_kv_text(text, source), source)


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load a key=value config file; absent keys take their defaults."""
    if path is None:
        return RunConfig()
    return _validate(read_kv_file(path), str(path))


def dump_config(cfg: RunConfig) -> str:
    return format_kv(cfg.model_dump().items(), header="ratslam run configuration")


def apply_overrides(cfg: RunConfig, overrides: Iterable[str]) -> RunConfig:
    """Return a new validated config with ``key=value`` overrides applied."""
    items: List[str] = list(overrides)
    if not items:
        return cfg
    values = {k: str(v) for k, v in parse_kv_text(dump_config(cfg)).items()}
    for item in items:
        key, value = parse_assignment(item)
        values[key] = value
    return _validate(values, "--set")

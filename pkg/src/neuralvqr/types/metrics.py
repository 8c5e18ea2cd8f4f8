"""
Metric report types
"""

from typing import Any, Dict, Optional

from pydantic import BaseModel, Field


class MetricReport(BaseModel):
    """One evaluated metric with the settings that produced it"""
    metric: str = Field(..., description="w2, sliced_w2, kde_l1, kde_kl, l2_uv_quantile or l2_uv_rank")
    value: float
    clipped_value: Optional[float] = Field(None, description="Value clipped at 0 for noisy estimators")
    config: Dict[str, Any] = Field(default_factory=dict, description="Projections, bandwidth, sample sizes")
    seed: Optional[int] = None

    def row(self) -> Dict[str, Any]:
        """Flat dict for CSV output"""
        out = {"metric": self.metric, "value": self.value, "clipped_value": self.clipped_value, "seed": self.seed}
        out.update({f"config.{k}": v for k, v in self.config.items()})
        return out

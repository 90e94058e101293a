import json
import os
from typing import Any, Dict, Optional


class DiagnosticsLog:
    """Per-epoch diagnostics of a fusion run, one JSON object per line."""

    def __init__(self, log_path: str, reset: bool = False):
        """Initialize the diagnostics log.

        Args:
            log_path (str): Path to the diagnostics file
            reset (bool): discard entries of a previous run
        """
        self.log_path = str(log_path)
        directory = os.path.dirname(self.log_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        if reset:
            open(self.log_path, "w", encoding="utf-8").close()

    def log_epoch(
        self,
        timestamp: float,
        factor_counts: Dict[str, int],
        rejected_tdcp: int,
        noise_model: Dict[str, Any],
        optimizer: Dict[str, Any],
        metadata: Optional[Dict[str, Any]] = None,
    ) -> None:
        """Append the diagnostics of one epoch.

        Args:
            timestamp (float): epoch time
            factor_counts (Dict[str, int]): number of factors per type in the window
            rejected_tdcp (int): TDCP candidates rejected by the cycle-slip check
            noise_model (Dict[str, Any]): pseudorange noise model parameters
            optimizer (Dict[str, Any]): convergence report
            metadata (Optional[Dict[str, Any]]): additional fields
        """
        entry = {
            "t": timestamp,
            "factor_counts": factor_counts,
            "rejected_tdcp": rejected_tdcp,
            "noise_model": noise_model,
            "optimizer": optimizer,
            **(metadata or {}),
        }
        with open(self.log_path, "a", encoding="utf-8") as f:
            json.dump(entry, f, sort_keys=True)
            f.write("\n")

    def summary(self) -> Dict[str, Any]:
        """Aggregate the logged epochs.

        Returns:
            Dict[str, Any]: total epochs, mean LM iterations, total rejected TDCP
        """
        if not os.path.exists(self.log_path):
            return {"total_epochs": 0, "mean_iterations": None, "total_rejected_tdcp": 0}

        total_epochs = 0
        total_iterations = 0
        total_rejected = 0
        with open(self.log_path, "r", encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    entry = json.loads(line)
                    total_epochs += 1
                    total_iterations += entry.get("optimizer", {}).get("iterations", 0)
                    total_rejected += entry.get("rejected_tdcp", 0)

        return {
            "total_epochs": total_epochs,
            "mean_iterations": (total_iterations / total_epochs) if total_epochs else None,
            "total_rejected_tdcp": total_rejected,
        }

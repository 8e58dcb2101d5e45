"""On-disk forms of a trained f-network and of single distilled stages."""
from __future__ import annotations

import numpy as np

from . import container, distill, kernel_net, svm
from .base_kernels import KernelBank
from .cascade import Stage


def _svm_arrays(model, prefix):
    return {f"{prefix}alphas": model.alphas, f"{prefix}labels": model.labels,
            f"{prefix}bias": np.array([model.bias])}


def _svm_meta(model):
    return {"C": model.C, "converged": model.converged, "degenerate": model.degenerate,
            "iterations": model.iterations}


def _svm_from(arrays, meta, prefix):
    return svm.SvmModel(arrays[f"{prefix}alphas"], float(arrays[f"{prefix}bias"][0]),
                        arrays[f"{prefix}labels"], meta["C"], converged=meta["converged"],
                        degenerate=meta["degenerate"], iterations=meta["iterations"])


def save_f(path, state, bank, train_idx, meta=None):
    m = {"layer_sizes": list(state.network.layer_sizes), "num_chunks": bank.num_chunks,
         "chunk_size": bank.chunk_size, "epochs": state.epochs, "converged": state.converged,
         "step": state.step, "svm": _svm_meta(state.svm), "extra": dict(meta or {})}
    arrays = {"bank_scales": bank.scales, "samples": state.samples,
              "train_labels": state.labels, "train_scores": state.train_scores,
              "train_idx": np.asarray(train_idx), "history": np.asarray(state.objective_history)}
    arrays.update(state.network.to_arrays())
    arrays.update(_svm_arrays(state.svm, "svm_"))
    container.save(path, "fmodel", m, arrays)


def load_f(path):
    """Returns ``(state, bank, train_idx, extra_meta)``."""
    _, m, a = container.load(path, expect_kind="fmodel")
    bank = KernelBank(m["num_chunks"], m["chunk_size"], a["bank_scales"])
    net = kernel_net.KernelNetwork.from_arrays(m["layer_sizes"], a)
    state = distill.TrainingState(
        net, _svm_from(a, m["svm"], "svm_"), m["step"], a["history"].tolist(), a["samples"],
        a["train_labels"], a["train_scores"], epochs=m["epochs"], converged=m["converged"])
    return state, bank, a["train_idx"], m["extra"]


def save_stage(path, stage, index, meta=None):
    m = {"layer_sizes": list(stage.arch), "index": index, "threshold": stage.threshold,
         "svm": _svm_meta(stage.model), "extra": dict(meta or {})}
    arrays = {"train_idx": stage.train_idx}
    arrays.update(stage.network.to_arrays())
    arrays.update(_svm_arrays(stage.model, "svm_"))
    container.save(path, "stage", m, arrays)


def load_stage(path):
    """Returns ``(stage, index, extra_meta)``."""
    _, m, a = container.load(path, expect_kind="stage")
    net = kernel_net.KernelNetwork.from_arrays(m["layer_sizes"], a)
    stage = Stage(net, _svm_from(a, m["svm"], "svm_"), a["train_idx"], m["threshold"])
    return stage, m["index"], m["extra"]

import numpy as np


def truth_state(model, cfg, truth, data):
    """Unconstrained state at the generating values of a simulated dataset."""
    rows, cols = data.panel.censored_index()
    v = dict(beta=np.concatenate(cfg.beta), sigma=np.array(cfg.sigma), omega=np.array(cfg.omega),
             B=truth["B"], logvar=truth["logvar"], gamma=np.array(cfg.gamma),
             psi=np.array(cfg.psi), x_cens=truth["uncensored_values"][rows, cols])
    if model.Q == 2:
        v["r"] = truth["r"]
        v["a"], v["b"] = cfg.corr_ab
    if model.survival:
        v["alpha"] = np.array(cfg.alpha)
        v["eta"] = np.array(cfg.eta)
        cens = model.cens_subjects
        v["t_cens"] = np.maximum(truth["event_time"][cens], data.survival.time[cens] + 1e-3)
    return model.unconstrain(v)


def central_differences(f, theta, h=1e-5):
    out = np.empty_like(theta)
    for k in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[k] = h
        out[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out

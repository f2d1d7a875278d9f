"""Independent reference implementations written with plain Python loops."""
import math


def whdr_naive(pred, pairs, tol=0.0):
    num = den = 0.0
    for p in pairs:
        za = float(pred[p.point_a[0]][p.point_a[1]])
        zb = float(pred[p.point_b[0]][p.point_b[1]])
        if abs(za - zb) <= tol:
            rel = 0
        elif za > zb:
            rel = 1
        else:
            rel = -1
        den += p.weight
        if rel != p.relation:
            num += p.weight
    return num / den


def _flat(a):
    return [float(v) for v in a.ravel().tolist()]


def rmse_naive(pred, gt):
    p, g = _flat(pred), _flat(gt)
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(p, g)) / len(p))


def delta_naive(pred, gt, thr=1.25):
    p, g = _flat(pred), _flat(gt)
    hits = sum(1 for x, y in zip(p, g) if max(x / y, y / x) < thr)
    return hits / len(p)


def si_rmse_naive(pred, gt, eps=1e-8):
    p, g = _flat(pred), _flat(gt)
    d = [math.log(x + eps) - math.log(y + eps) for x, y in zip(p, g)]
    n = len(d)
    mean = sum(d) / n
    var = sum(v * v for v in d) / n - mean * mean
    return math.sqrt(max(var, 0.0))


def ranking_naive(z, pairs):
    total = 0.0
    for p in pairs:
        zi = float(z[p.point_a[0]][p.point_a[1]])
        zj = float(z[p.point_b[0]][p.point_b[1]])
        if p.relation == 0:
            total += (zi - zj) ** 2
        else:
            x = -p.relation * (zi - zj)
            total += math.log1p(math.exp(-abs(x))) + max(x, 0.0)
    return total / len(pairs)


def central_difference(fn, x, h=1e-4):
    """Numerical gradient of scalar ``fn`` at float64 tensor ``x``."""
    import torch

    grad = torch.zeros_like(x)
    flat, gflat = x.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        up = float(fn(x))
        flat[i] = orig - h
        down = float(fn(x))
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad

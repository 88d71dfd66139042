"""Independent reference implementations used as test oracles.

Everything here is written as plain scalar/loop code, deliberately sharing no
helpers with the package, so that agreement between the two is meaningful.
"""

import math

import numpy as np


# ---------------------------------------------------------------- colorimetry

RGB_TO_XYZ = (
    (0.4124564, 0.3575761, 0.1804375),
    (0.2126729, 0.7151522, 0.0721750),
    (0.0193339, 0.1191920, 0.9503041),
)


def luv_pixel(r, g, b):
    """Scalar CIE L*u*v* of one linear-RGB pixel, rescaled to [0, 1]."""
    x = RGB_TO_XYZ[0][0] * r + RGB_TO_XYZ[0][1] * g + RGB_TO_XYZ[0][2] * b
    y = RGB_TO_XYZ[1][0] * r + RGB_TO_XYZ[1][1] * g + RGB_TO_XYZ[1][2] * b
    z = RGB_TO_XYZ[2][0] * r + RGB_TO_XYZ[2][1] * g + RGB_TO_XYZ[2][2] * b
    xn = sum(RGB_TO_XYZ[0])
    yn = sum(RGB_TO_XYZ[1])
    zn = sum(RGB_TO_XYZ[2])
    yr = y / yn
    eps = (6.0 / 29.0) ** 3
    kappa = (29.0 / 3.0) ** 3
    lstar = 116.0 * yr ** (1.0 / 3.0) - 16.0 if yr > eps else kappa * yr
    dn = xn + 15.0 * yn + 3.0 * zn
    un_p = 4.0 * xn / dn
    vn_p = 9.0 * yn / dn
    d = x + 15.0 * y + 3.0 * z
    if d > 0:
        u_p = 4.0 * x / d
        v_p = 9.0 * y / d
    else:
        u_p, v_p = un_p, vn_p
    ustar = 13.0 * lstar * (u_p - un_p)
    vstar = 13.0 * lstar * (v_p - vn_p)
    return lstar / 100.0, (ustar + 90.0) / 270.0, (vstar + 140.0) / 250.0


def gradient_pixel(img, i, j):
    """Scalar centred-difference gradient of one pixel, replicated borders.

    For multi-plane images returns the (dx, dy) of the plane with the
    largest gradient magnitude at that pixel.
    """
    h, w = img.shape[:2]
    planes = img[..., None] if img.ndim == 2 else img
    best = (0.0, 0.0, -1.0)
    for c in range(planes.shape[2]):
        left = planes[i, max(j - 1, 0), c]
        right = planes[i, min(j + 1, w - 1), c]
        up = planes[max(i - 1, 0), j, c]
        down = planes[min(i + 1, h - 1), j, c]
        dx = float(right) - float(left)
        dy = float(down) - float(up)
        mag = math.sqrt(dx * dx + dy * dy)
        if mag > best[2]:
            best = (dx, dy, mag)
    return best


def gradient_channels_ref(img):
    """Loop recomputation of magnitude + 6 soft-assigned orientation bins."""
    h, w = img.shape[:2]
    out = np.zeros((7, h, w))
    for i in range(h):
        for j in range(w):
            dx, dy, mag = gradient_pixel(img, i, j)
            out[0, i, j] = mag
            theta = math.atan2(dy, dx) % math.pi
            t = theta / (math.pi / 6.0)
            lo = int(math.floor(t)) % 6
            frac = t - math.floor(t)
            out[1 + lo, i, j] += mag * (1.0 - frac)
            out[1 + (lo + 1) % 6, i, j] += mag * frac
    return out


def channel_means_ref(img):
    """Per-channel means recomputed from the scalar oracles."""
    h, w = img.shape[:2]
    luv = np.zeros((3, h, w))
    for i in range(h):
        for j in range(w):
            luv[:, i, j] = luv_pixel(*(float(v) for v in img[i, j]))
    grads = gradient_channels_ref(img)
    return np.array([luv[0].mean(), luv[1].mean(), luv[2].mean()]
                    + [grads[k].mean() for k in range(7)])


# ------------------------------------------------------------ integral images

def rect_sum_ref(plane, y0, x0, y1, x1):
    """Rectangle sum over [y0, y1) x [x0, x1) via an explicit loop."""
    total = 0.0
    for i in range(y0, y1):
        for j in range(x0, x1):
            total += float(plane[i, j])
    return total


def correlate_filter_ref(plane, weights, cell_px, stride):
    """Valid-region correlation of a cell filter with a plane, loop version."""
    rows, cols = weights.shape
    sh, sw = rows * cell_px, cols * cell_px
    h, w = plane.shape
    gh = (h - sh) // stride + 1
    gw = (w - sw) // stride + 1
    out = np.zeros((gh, gw))
    for gy in range(gh):
        for gx in range(gw):
            acc = 0.0
            for i in range(rows):
                for j in range(cols):
                    if weights[i, j] == 0.0:
                        continue
                    y0 = gy * stride + i * cell_px
                    x0 = gx * stride + j * cell_px
                    acc += weights[i, j] * rect_sum_ref(plane, y0, x0, y0 + cell_px, x0 + cell_px)
            out[gy, gx] = acc
    return out


def count_placements_ref(win_w, win_h, support_w, support_h, stride):
    """Brute-force enumeration of in-window filter placements."""
    count = 0
    x = 0
    while True:
        if x + support_w > win_w:
            break
        y = 0
        while True:
            if y + support_h > win_h:
                break
            count += 1
            y += stride
        x += stride
    return count


# ------------------------------------------------------------------ checkers

def checkerboard_count_formula(max_rows, max_cols):
    """Closed-form count of the checkerboards generation rule."""
    total = 0
    for m in range(1, max_rows + 1):
        for n in range(1, max_cols + 1):
            total += (1 if m == n else 0) + (n - 1) + (m - 1)
            total += 1 if (m >= 2 and n >= 2) else 0
    return total


# --------------------------------------------------------------- linear algebra

def jacobi_eigh(a, tol=1e-14, max_sweeps=60):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue,
    eigenvectors in columns.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.tril(a, -1) ** 2)))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:  # theta**2 would overflow
                    t = 1.0 / (2.0 * theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp = a[:, p].copy()
                rq = a[:, q].copy()
                a[:, p] = c * rp - s * rq
                a[:, q] = s * rp + c * rq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    evals = np.diag(a).copy()
    order = np.argsort(evals)[::-1]
    return evals[order], v[:, order]


# ------------------------------------------------------------------ boosting

def brute_force_split(x, y, w, n_bins=256):
    """Exhaustive (feature, threshold bin) scan on raw features.

    Quantizes each feature to ``n_bins`` equal-width bins over its own range,
    then scans every (feature, bin) pair for the lowest weighted
    misclassification error of the two would-be leaves. Ties prefer the
    lowest feature, then the lowest bin.
    """
    n, n_feat = x.shape
    best = (math.inf, -1, -1)
    for f in range(n_feat):
        lo = float(x[:, f].min())
        hi = float(x[:, f].max())
        width = (hi - lo) / n_bins if hi > lo else 0.0
        bins = np.zeros(n, dtype=int)
        for i in range(n):
            b = int((x[i, f] - lo) / width) if width > 0 else 0
            bins[i] = min(max(b, 0), n_bins - 1)
        for t in range(n_bins - 1):
            lp = ln = rp = rn = 0.0
            for i in range(n):
                if bins[i] <= t:
                    if y[i] > 0:
                        lp += w[i]
                    else:
                        ln += w[i]
                else:
                    if y[i] > 0:
                        rp += w[i]
                    else:
                        rn += w[i]
            err = min(lp, ln) + min(rp, rn)
            if err < best[0]:
                best = (err, f, t)
    return best


# ---------------------------------------------------------------- detection

def nms_ref(boxes, scores, overlap_max):
    """Reference greedy NMS with min-area overlap, vectorised differently.

    boxes: (n, 4) array of (x, y, w, h); returns kept indices in keep order.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    x1 = boxes[:, 0]
    y1 = boxes[:, 1]
    x2 = boxes[:, 0] + boxes[:, 2]
    y2 = boxes[:, 1] + boxes[:, 3]
    areas = boxes[:, 2] * boxes[:, 3]
    order = np.argsort(-scores, kind="stable")
    keep = []
    alive = np.ones(len(boxes), dtype=bool)
    for i in order:
        if not alive[i]:
            continue
        keep.append(int(i))
        iw = np.minimum(x2[i], x2) - np.maximum(x1[i], x1)
        ih = np.minimum(y2[i], y2) - np.maximum(y1[i], y1)
        inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
        ov = inter / np.minimum(areas[i], areas)
        alive &= ov <= overlap_max
        alive[i] = False
    return keep


def greedy_match_ref(det_boxes, det_scores, anno_boxes, iou_min):
    """Reference greedy matcher over non-ignore annotations only."""

    def iou(a, b):
        ax0, ay0, aw, ah = a
        bx0, by0, bw, bh = b
        ix = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
        iy = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
        inter = ix * iy
        if inter <= 0:
            return 0.0
        return inter / (aw * ah + bw * bh - inter)

    order = sorted(range(len(det_boxes)), key=lambda i: -det_scores[i])
    taken = [False] * len(anno_boxes)
    status = [0] * len(det_boxes)
    for di in order:
        best_iou, best_ai = 0.0, -1
        for ai, ab in enumerate(anno_boxes):
            if taken[ai]:
                continue
            v = iou(det_boxes[di], ab)
            if v > best_iou:
                best_iou, best_ai = v, ai
        if best_ai >= 0 and best_iou >= iou_min:
            taken[best_ai] = True
            status[di] = 1
    return status, taken


# ------------------------------------------------------------------ metrics

def miss_rate_sweep_ref(scores, is_tp, n_images, n_pos):
    """Brute-force MR recomputation: re-count TP/FP at every threshold."""
    refs = [10.0 ** p for p in np.linspace(-2.0, 0.0, 9)]
    ref_mr = [1.0] * 9
    for thr in sorted(set(scores), reverse=True):
        tp = sum(1 for s, t in zip(scores, is_tp) if s >= thr and t)
        fp = sum(1 for s, t in zip(scores, is_tp) if s >= thr and not t)
        fppi = fp / n_images
        mr = 1.0 - tp / n_pos
        for k, ref in enumerate(refs):
            if fppi <= ref and mr < ref_mr[k]:
                ref_mr[k] = mr
    if all(v == 0.0 for v in ref_mr):
        return 0.0
    return math.exp(sum(math.log(max(v, 1e-10)) for v in ref_mr) / 9.0)


def average_precision_ref(scores, is_tp, n_pos, recall_points=41):
    """Brute-force AP recomputation over the pooled sweep."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    tp = 0
    prec, rec = [], []
    for rank, i in enumerate(order, 1):
        if is_tp[i]:
            tp += 1
        prec.append(tp / rank)
        rec.append(tp / n_pos)
    total = 0.0
    for r in np.linspace(0.0, 1.0, recall_points):
        best = 0.0
        for p, rr in zip(prec, rec):
            if rr >= r and p > best:
                best = p
        total += best
    return total / recall_points


def bilinear_sample_ref(img, ys, xs):
    """Scalar bilinear sampling with mirror reflection outside the image."""
    h, w = img.shape[:2]

    def reflect(v, n):
        if n == 1:
            return 0
        period = 2 * n - 2
        v = abs(v) % period
        return period - v if v >= n else v

    out = np.zeros((len(ys), len(xs), img.shape[2]), dtype=np.float64)
    for a, y in enumerate(ys):
        for b, x in enumerate(xs):
            y0 = math.floor(y)
            x0 = math.floor(x)
            fy = y - y0
            fx = x - x0
            p00 = img[reflect(y0, h), reflect(x0, w)]
            p01 = img[reflect(y0, h), reflect(x0 + 1, w)]
            p10 = img[reflect(y0 + 1, h), reflect(x0, w)]
            p11 = img[reflect(y0 + 1, h), reflect(x0 + 1, w)]
            out[a, b] = (p00 * (1 - fy) * (1 - fx) + p01 * (1 - fy) * fx
                         + p10 * fy * (1 - fx) + p11 * fy * fx)
    return out

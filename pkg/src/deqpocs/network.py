"""Learnable self-consistency operator with a certified contraction bound.

The operator is a composition of residual blocks. Each block mixes its input
``a`` with a five-layer complex CNN branch as ``(0.99 - alpha) * a +
alpha * cnn(a)`` with ``alpha in [0, 0.99]``, which keeps the block a
contraction whenever every convolution layer has spectral norm <= 1. The
``hybrid`` variant adds a second five-layer branch that operates after an
inverse FFT (image domain) and returns through a forward FFT; the two branch
outputs are combined convexly with weights ``(c_k, c_i)``. Activations are
leaky ReLU (slope 0.2) applied separately to real and imaginary parts, a
1-Lipschitz choice, on all but the final layer of each branch.

Certification multiplies per-layer power-iteration spectral-norm estimates
within a branch, mixes branches convexly, and multiplies across blocks; the
bound is maintained by :func:`normalize_params` after every optimizer step.
Exact reverse-mode products (:func:`vjp`) treat complex tensors as stacked
real pairs.

``forward`` and ``vjp`` never mutate parameters, so one parameter state can
serve many concurrent evaluations; ``normalize_params`` and optimizer
updates assume exclusive access (the training loop is the only writer).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import CertificateError, InvalidInputError, ShapeError
from .rng import RandomStream
from .tensors import (
    CT01_MAGIC,
    adjoint_kernel,
    as_tensor,
    conv2d_complex,
    conv2d_kernel_grad,
    fft2_centered,
    gaussian_tensor,
    ifft2_centered,
    inner_real,
    read_ct01_bytes,
    spectral_norm_power_iter,
    write_ct01_bytes,
)

VARIANTS = ("kspace", "hybrid")
CK01_MAGIC = b"CK01"

ALPHA_CEIL = 0.99
KERNEL_SIZE = 3
LAYERS_PER_BRANCH = 5
INIT_STD = 0.05
NORM_SLACK = 1e-3  # kernels divided by sigma * (1 + NORM_SLACK) when above 1
NORM_DEADZONE = 1e-6  # rescale only when sigma * (1 + slack) exceeds 1 + deadzone
WARM_POWER_ITERS = 5
FULL_POWER_ITERS = 50


def layer_widths(nc: int, features: int) -> list[tuple[int, int]]:
    """(C_in, C_out) per layer for the Nc -> F -> F -> F -> F -> Nc stack."""
    widths = [nc, features, features, features, features, nc]
    return list(zip(widths[:-1], widths[1:]))


@dataclass
class BranchParams:
    """One five-layer CNN branch: kernels, biases, and normalization state."""

    kernels: list[np.ndarray]
    biases: list[np.ndarray]
    sigmas: list[float]
    power_vecs: list[np.ndarray]


@dataclass
class BlockParams:
    kspace_branch: BranchParams
    alpha: float
    image_branch: BranchParams | None = None
    c_k: float = 1.0
    c_i: float = 0.0


@dataclass
class ConsistencyNetParams:
    variant: str
    blocks: list[BlockParams]
    features: int
    nc: int
    cert_grid: tuple[int, int]


@dataclass(frozen=True)
class LipschitzCertificate:
    """Contraction bound for the whole operator, from power-iteration
    estimates of per-kernel spectral norms (conservative product bound)."""

    contraction_bound: float
    block_bounds: tuple[float, ...]
    kernel_bounds: tuple[float, ...]
    method: str = "power-iteration"
    slack: float = NORM_SLACK

    @property
    def is_contractive(self) -> bool:
        return 0.0 <= self.contraction_bound < 1.0


def require_contractive(cert: LipschitzCertificate) -> None:
    if not cert.is_contractive:
        raise CertificateError(
            f"operator certificate {cert.contraction_bound:.6f} is not < 1"
        )


# ---------------------------------------------------------------------------
# Initialization and normalization
# ---------------------------------------------------------------------------

def _init_branch(nc: int, features: int, stream: RandomStream, grid) -> BranchParams:
    kernels, biases = [], []
    for cin, cout in layer_widths(nc, features):
        k = INIT_STD * gaussian_tensor((KERNEL_SIZE * KERNEL_SIZE, cin, cout), stream)
        kernels.append(k.reshape(KERNEL_SIZE, KERNEL_SIZE, cin, cout))
        biases.append(np.zeros(cout, dtype=np.complex128))
    branch = BranchParams(kernels=kernels, biases=biases, sigmas=[], power_vecs=[])
    _certify_branch(branch, grid, iters=FULL_POWER_ITERS)
    _rescale_branch(branch)
    return branch


def _certify_branch(branch: BranchParams, grid, iters: int) -> None:
    """(Re)estimate every kernel's spectral norm, warm-starting when possible."""
    sigmas, vecs = [], []
    for i, k in enumerate(branch.kernels):
        start = branch.power_vecs[i] if i < len(branch.power_vecs) else None
        sigma, vec = spectral_norm_power_iter(
            k, grid, iters=iters, seed=0, start=start, return_vector=True
        )
        sigmas.append(sigma)
        vecs.append(vec)
    branch.sigmas = sigmas
    branch.power_vecs = vecs


def _rescale_branch(branch: BranchParams) -> None:
    """Divide kernels whose estimated norm breaches 1 by sigma*(1+slack)."""
    for i, sigma in enumerate(branch.sigmas):
        scale = sigma * (1.0 + NORM_SLACK)
        if scale > 1.0 + NORM_DEADZONE:
            branch.kernels[i] = branch.kernels[i] / scale
            branch.sigmas[i] = sigma / scale


def init_params(
    variant: str,
    blocks: int,
    features: int,
    nc: int,
    seed: int = 0,
    grid: tuple[int, int] = (32, 32),
) -> ConsistencyNetParams:
    """Gaussian-initialized (std 0.05), spectrally normalized parameters.

    ``grid`` fixes the input size on which spectral norms are certified;
    zero same-padding makes the conv operator norm nondecreasing in grid
    size, so a certificate on ``grid`` also covers smaller inputs.
    Deterministic given the seed; alpha starts at 0.5, branch combination
    at (0.5, 0.5) for the hybrid variant.
    """
    if variant not in VARIANTS:
        raise ShapeError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if blocks < 1 or features < 1 or nc < 1:
        raise ShapeError("blocks, features and coil count must be >= 1")
    stream = RandomStream(seed)
    out_blocks = []
    for _ in range(blocks):
        kb = _init_branch(nc, features, stream, grid)
        if variant == "hybrid":
            ib = _init_branch(nc, features, stream, grid)
            out_blocks.append(
                BlockParams(kspace_branch=kb, alpha=0.5, image_branch=ib, c_k=0.5, c_i=0.5)
            )
        else:
            out_blocks.append(BlockParams(kspace_branch=kb, alpha=0.5))
    return ConsistencyNetParams(
        variant=variant, blocks=out_blocks, features=features, nc=nc, cert_grid=grid
    )


def normalize_params(params: ConsistencyNetParams) -> ConsistencyNetParams:
    """Project parameters back onto the certified-contractive set.

    Each kernel is divided by ``sigma * (1 + 1e-3)`` when its warm-started
    power-iteration estimate ``sigma`` exceeds 1 (a dead zone of 1e-6 keeps
    the projection a bitwise no-op on already-normalized kernels); alpha is
    clamped to [0, 0.99] and the hybrid combination weights are projected
    onto the simplex. The result always certifies at L <= 0.99.
    """
    params = clone_params(params)
    for blk in params.blocks:
        _certify_branch(blk.kspace_branch, params.cert_grid, iters=WARM_POWER_ITERS)
        _rescale_branch(blk.kspace_branch)
        if blk.image_branch is not None:
            _certify_branch(blk.image_branch, params.cert_grid, iters=WARM_POWER_ITERS)
            _rescale_branch(blk.image_branch)
        blk.alpha = float(min(max(blk.alpha, 0.0), ALPHA_CEIL))
        if params.variant == "hybrid":
            ck, ci = max(blk.c_k, 0.0), max(blk.c_i, 0.0)
            s = ck + ci
            if s == 0.0:
                ck = ci = 0.5
            else:
                ck, ci = ck / s, ci / s
            blk.c_k, blk.c_i = float(ck), float(ci)
    return params


def clone_params(params: ConsistencyNetParams) -> ConsistencyNetParams:
    blocks = []
    for blk in params.blocks:
        def copy_branch(br: BranchParams) -> BranchParams:
            return BranchParams(
                kernels=[k.copy() for k in br.kernels],
                biases=[b.copy() for b in br.biases],
                sigmas=list(br.sigmas),
                power_vecs=[v.copy() for v in br.power_vecs],
            )

        blocks.append(
            BlockParams(
                kspace_branch=copy_branch(blk.kspace_branch),
                alpha=blk.alpha,
                image_branch=(
                    copy_branch(blk.image_branch) if blk.image_branch is not None else None
                ),
                c_k=blk.c_k,
                c_i=blk.c_i,
            )
        )
    return replace(params, blocks=blocks)


def certified_lipschitz(params: ConsistencyNetParams) -> LipschitzCertificate:
    """Conservative contraction bound from stored per-kernel estimates.

    Per block: ``(0.99 - alpha) + alpha * prod(layer norms)`` per branch
    (activation Lipschitz constant 1), convex branch mix for the hybrid
    variant; bounds multiply across blocks. Normalized parameters always
    certify at <= 0.99.
    """
    block_bounds = []
    kernel_bounds: list[float] = []
    for blk in params.blocks:
        bk = (ALPHA_CEIL - blk.alpha) + blk.alpha * float(np.prod(blk.kspace_branch.sigmas))
        kernel_bounds.extend(blk.kspace_branch.sigmas)
        if blk.image_branch is not None:
            bi = (ALPHA_CEIL - blk.alpha) + blk.alpha * float(np.prod(blk.image_branch.sigmas))
            kernel_bounds.extend(blk.image_branch.sigmas)
            bound = blk.c_k * bk + blk.c_i * bi
        else:
            bound = bk
        block_bounds.append(bound)
    total = float(np.prod(block_bounds))
    return LipschitzCertificate(
        contraction_bound=total,
        block_bounds=tuple(block_bounds),
        kernel_bounds=tuple(kernel_bounds),
    )


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def _lrelu_with_mult(z: np.ndarray):
    m_re = np.where(z.real >= 0, 1.0, 0.2)
    m_im = np.where(z.imag >= 0, 1.0, 0.2)
    return z.real * m_re + 1j * (z.imag * m_im), m_re, m_im


def _branch_forward(branch: BranchParams, a: np.ndarray, trace: dict | None) -> np.ndarray:
    h = a
    inputs, mults = [], []
    n = len(branch.kernels)
    for i, (k, b) in enumerate(zip(branch.kernels, branch.biases)):
        inputs.append(h)
        z = conv2d_complex(h, k) + b
        if i < n - 1:
            h, m_re, m_im = _lrelu_with_mult(z)
            mults.append((m_re, m_im))
        else:
            h = z
    if trace is not None:
        trace["inputs"] = inputs
        trace["mults"] = mults
        trace["out"] = h
        trace["adj_kernels"] = [adjoint_kernel(k) for k in branch.kernels]
    return h


def _block_forward(blk: BlockParams, a: np.ndarray, trace: dict | None) -> np.ndarray:
    ktrace = {} if trace is not None else None
    bk = _branch_forward(blk.kspace_branch, a, ktrace)
    out_k = (ALPHA_CEIL - blk.alpha) * a + blk.alpha * bk
    if blk.image_branch is None:
        if trace is not None:
            trace.update({"a": a, "k": ktrace})
        return out_k
    a_img = ifft2_centered(a)
    itrace = {} if trace is not None else None
    bi = _branch_forward(blk.image_branch, a_img, itrace)
    out_i_img = (ALPHA_CEIL - blk.alpha) * a_img + blk.alpha * bi
    out_img = fft2_centered(out_i_img)
    out = blk.c_k * out_k + blk.c_i * out_img
    if trace is not None:
        trace.update(
            {"a": a, "k": ktrace, "i": itrace, "a_img": a_img,
             "out_k": out_k, "out_img": out_img}
        )
    return out


def _check_input(params: ConsistencyNetParams, x: np.ndarray) -> np.ndarray:
    x = as_tensor(x, "operator input")
    if x.shape[2] != params.nc:
        raise ShapeError(f"input has {x.shape[2]} channels, operator expects {params.nc}")
    return x


def forward(params: ConsistencyNetParams, x: np.ndarray) -> np.ndarray:
    """Apply the composed operator to a k-space tensor."""
    x = _check_input(params, x)
    for blk in params.blocks:
        x = _block_forward(blk, x, None)
    return x


def forward_with_trace(params: ConsistencyNetParams, x: np.ndarray):
    """Forward pass that records every intermediate needed for reverse mode."""
    x = _check_input(params, x)
    traces = []
    for blk in params.blocks:
        t: dict = {}
        x = _block_forward(blk, x, t)
        traces.append(t)
    return x, traces


# ---------------------------------------------------------------------------
# Reverse-mode products
# ---------------------------------------------------------------------------

def _branch_backward(
    branch: BranchParams,
    trace: dict,
    cot: np.ndarray,
    grads: dict | None,
    key: tuple,
) -> np.ndarray:
    """Cotangent of the branch input; optionally accumulate kernel/bias grads."""
    g = cot
    n = len(branch.kernels)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            m_re, m_im = trace["mults"][i]
            g = g.real * m_re + 1j * (g.imag * m_im)
        if grads is not None:
            kh, kw = branch.kernels[i].shape[:2]
            grads[key + ("k", i)] = grads.get(key + ("k", i), 0) + conv2d_kernel_grad(
                trace["inputs"][i], g, kh, kw
            )
            grads[key + ("b", i)] = grads.get(key + ("b", i), 0) + g.sum(axis=(0, 1))
        g = conv2d_complex(g, trace["adj_kernels"][i])
    return g


def _block_backward(
    blk: BlockParams,
    trace: dict,
    cot: np.ndarray,
    grads: dict | None,
    bidx: int,
) -> np.ndarray:
    a = trace["a"]
    if blk.image_branch is None:
        if grads is not None:
            grads[("alpha", bidx)] = inner_real(cot, trace["k"]["out"] - a)
        gb = _branch_backward(blk.kspace_branch, trace["k"], blk.alpha * cot, grads, ("ks", bidx))
        return (ALPHA_CEIL - blk.alpha) * cot + gb
    cot_k = blk.c_k * cot
    cot_img = ifft2_centered(blk.c_i * cot)  # adjoint of the closing FFT
    if grads is not None:
        d_alpha = blk.c_k * inner_real(cot, trace["k"]["out"] - a)
        d_alpha += inner_real(cot_img, trace["i"]["out"] - trace["a_img"])
        grads[("alpha", bidx)] = d_alpha
        grads[("c_k", bidx)] = inner_real(cot, trace["out_k"])
        grads[("c_i", bidx)] = inner_real(cot, trace["out_img"])
    gb_k = _branch_backward(blk.kspace_branch, trace["k"], blk.alpha * cot_k, grads, ("ks", bidx))
    grad_a = (ALPHA_CEIL - blk.alpha) * cot_k + gb_k
    gb_i = _branch_backward(blk.image_branch, trace["i"], blk.alpha * cot_img, grads, ("im", bidx))
    grad_a_img = (ALPHA_CEIL - blk.alpha) * cot_img + gb_i
    return grad_a + fft2_centered(grad_a_img)  # adjoint of the opening inverse FFT


def jacobian_vjp(params: ConsistencyNetParams, traces: list, cot: np.ndarray) -> np.ndarray:
    """Input cotangent J^T v at the traced point (no parameter gradients)."""
    g = cot
    for bidx in range(len(params.blocks) - 1, -1, -1):
        g = _block_backward(params.blocks[bidx], traces[bidx], g, None, bidx)
    return g


def param_vjp(params: ConsistencyNetParams, traces: list, cot: np.ndarray) -> np.ndarray:
    """Parameter cotangent of one operator application, as a flat real vector
    aligned with :func:`pack_params`."""
    grads: dict = {}
    g = cot
    for bidx in range(len(params.blocks) - 1, -1, -1):
        g = _block_backward(params.blocks[bidx], traces[bidx], g, grads, bidx)
    return _grads_to_vector(params, grads)


def vjp(params: ConsistencyNetParams, x: np.ndarray, cotangent: np.ndarray):
    """Exact reverse-mode products of one forward application.

    Returns ``(grad_params, grad_x)`` where complex tensors are treated as
    stacked real pairs; ``grad_params`` is a flat real vector aligned with
    :func:`pack_params`.
    """
    x = _check_input(params, x)
    cot = as_tensor(cotangent, "cotangent")
    if cot.shape != x.shape:
        raise ShapeError(f"cotangent shape {cot.shape} does not match input {x.shape}")
    out, traces = forward_with_trace(params, x)
    del out
    grads: dict = {}
    g = cot
    for bidx in range(len(params.blocks) - 1, -1, -1):
        g = _block_backward(params.blocks[bidx], traces[bidx], g, grads, bidx)
    return _grads_to_vector(params, grads), g


# ---------------------------------------------------------------------------
# Flat real parameterization (used by the optimizer and gradient checks)
# ---------------------------------------------------------------------------

def _param_entries(params: ConsistencyNetParams):
    """Canonical (key, kind) walk over trainable parameters."""
    for bidx, blk in enumerate(params.blocks):
        for i in range(len(blk.kspace_branch.kernels)):
            yield ("ks", bidx, "k", i)
            yield ("ks", bidx, "b", i)
        if blk.image_branch is not None:
            for i in range(len(blk.image_branch.kernels)):
                yield ("im", bidx, "k", i)
                yield ("im", bidx, "b", i)
        yield ("alpha", bidx)
        if params.variant == "hybrid":
            yield ("c_k", bidx)
            yield ("c_i", bidx)


def _get_entry(params: ConsistencyNetParams, key):
    if key[0] in ("ks", "im"):
        branch = params.blocks[key[1]].kspace_branch if key[0] == "ks" else params.blocks[key[1]].image_branch
        return branch.kernels[key[3]] if key[2] == "k" else branch.biases[key[3]]
    blk = params.blocks[key[1]]
    return {"alpha": blk.alpha, "c_k": blk.c_k, "c_i": blk.c_i}[key[0]]


def _set_entry(params: ConsistencyNetParams, key, value):
    if key[0] in ("ks", "im"):
        branch = params.blocks[key[1]].kspace_branch if key[0] == "ks" else params.blocks[key[1]].image_branch
        if key[2] == "k":
            branch.kernels[key[3]] = value
        else:
            branch.biases[key[3]] = value
    else:
        blk = params.blocks[key[1]]
        setattr(blk, {"alpha": "alpha", "c_k": "c_k", "c_i": "c_i"}[key[0]], float(value))


def pack_params(params: ConsistencyNetParams) -> np.ndarray:
    """Flatten all trainable parameters to one float64 vector.

    Complex arrays contribute interleaved (real, imag) pairs in C order;
    scalars contribute one entry. Order: per block, k-space kernels and
    biases layer by layer, then (hybrid) image kernels/biases, then alpha
    and (hybrid) the combination pair.
    """
    parts = []
    for key in _param_entries(params):
        v = _get_entry(params, key)
        if isinstance(v, np.ndarray):
            parts.append(np.ascontiguousarray(v).view(np.float64).ravel())
        else:
            parts.append(np.array([v], dtype=np.float64))
    return np.concatenate(parts)


def unpack_params(params: ConsistencyNetParams, vec: np.ndarray) -> ConsistencyNetParams:
    """Inverse of :func:`pack_params` (normalization state is carried over)."""
    expected = sum(
        _get_entry(params, key).size * 2 if isinstance(_get_entry(params, key), np.ndarray) else 1
        for key in _param_entries(params)
    )
    if vec.size != expected:
        raise ShapeError(f"parameter vector length {vec.size}, expected {expected}")
    out = clone_params(params)
    pos = 0
    for key in _param_entries(out):
        v = _get_entry(out, key)
        if isinstance(v, np.ndarray):
            n = v.size * 2
            flat = vec[pos : pos + n]
            _set_entry(out, key, flat.copy().view(np.complex128).reshape(v.shape))
            pos += n
        else:
            _set_entry(out, key, float(vec[pos]))
            pos += 1
    if pos != vec.size:
        raise ShapeError(f"parameter vector length {vec.size}, expected {pos}")
    return out


def _grads_to_vector(params: ConsistencyNetParams, grads: dict) -> np.ndarray:
    parts = []
    for key in _param_entries(params):
        v = _get_entry(params, key)
        if isinstance(v, np.ndarray):
            g = grads.get((key[0], key[1], key[2], key[3]), None)
            if g is None:
                parts.append(np.zeros(v.size * 2, dtype=np.float64))
            else:
                parts.append(np.ascontiguousarray(g).view(np.float64).ravel())
        else:
            parts.append(np.array([grads.get((key[0], key[1]), 0.0)], dtype=np.float64))
    return np.concatenate(parts)


def num_params(params: ConsistencyNetParams) -> int:
    return pack_params(params).size


# ---------------------------------------------------------------------------
# CK01 checkpoint container
# ---------------------------------------------------------------------------

def write_ck01_bytes(params: ConsistencyNetParams, certificate: float | None = None) -> bytes:
    """Serialize parameters to the CK01 container.

    Layout: magic ``CK01``; variant byte (0 k-space, 1 hybrid); uint32 LE
    B, F, Nc, cert_H, cert_W; kernels in block/layer order as CT01 payloads
    with dims (kh, kw, C_in*C_out), each followed by its bias as a
    (1, 1, C_out) CT01 payload (image-branch payloads follow the k-space
    ones within each block); then per-block float32 alpha, c_k, c_i; then
    the float32 certificate L.
    """
    if certificate is None:
        certificate = certified_lipschitz(params).contraction_bound
    out = [CK01_MAGIC, struct.pack("<B", VARIANTS.index(params.variant))]
    out.append(
        struct.pack(
            "<IIIII",
            len(params.blocks),
            params.features,
            params.nc,
            params.cert_grid[0],
            params.cert_grid[1],
        )
    )
    for blk in params.blocks:
        branches = [blk.kspace_branch] + ([blk.image_branch] if blk.image_branch else [])
        for br in branches:
            for k, b in zip(br.kernels, br.biases):
                kh, kw, cin, cout = k.shape
                out.append(write_ct01_bytes(k.reshape(kh, kw, cin * cout)))
                out.append(write_ct01_bytes(b.reshape(1, 1, cout)))
    for blk in params.blocks:
        out.append(struct.pack("<fff", blk.alpha, blk.c_k, blk.c_i))
    out.append(struct.pack("<f", certificate))
    return b"".join(out)


def _read_payload(data: bytes, pos: int):
    if data[pos : pos + 4] != CT01_MAGIC:
        raise InvalidInputError("bad CT01 payload inside checkpoint")
    H, W, C = struct.unpack("<III", data[pos + 4 : pos + 16])
    size = 16 + H * W * C * 8
    return read_ct01_bytes(data[pos : pos + size]), pos + size


def read_ck01_bytes(data: bytes):
    """Deserialize a checkpoint; returns ``(params, stored_certificate)``.

    Spectral-norm estimates are recomputed with the full power iteration on
    the stored certification grid, so the returned parameters carry a fresh,
    verifiable certificate.
    """
    if data[:4] != CK01_MAGIC:
        raise InvalidInputError("bad CK01 magic")
    variant = VARIANTS[data[4]]
    B, F, nc, gh, gw = struct.unpack("<IIIII", data[5:25])
    pos = 25
    blocks = []
    widths = layer_widths(nc, F)
    for _ in range(B):
        branches = []
        nbranch = 2 if variant == "hybrid" else 1
        for _ in range(nbranch):
            kernels, biases = [], []
            for cin, cout in widths:
                payload, pos = _read_payload(data, pos)
                kernels.append(payload.reshape(KERNEL_SIZE, KERNEL_SIZE, cin, cout))
                payload, pos = _read_payload(data, pos)
                biases.append(payload.reshape(cout))
            branches.append(BranchParams(kernels=kernels, biases=biases, sigmas=[], power_vecs=[]))
        blocks.append(
            BlockParams(
                kspace_branch=branches[0],
                alpha=0.0,
                image_branch=branches[1] if variant == "hybrid" else None,
            )
        )
    for blk in blocks:
        a, ck, ci = struct.unpack("<fff", data[pos : pos + 12])
        blk.alpha, blk.c_k, blk.c_i = float(a), float(ck), float(ci)
        pos += 12
    (stored_l,) = struct.unpack("<f", data[pos : pos + 4])
    params = ConsistencyNetParams(
        variant=variant, blocks=blocks, features=F, nc=nc, cert_grid=(gh, gw)
    )
    for blk in params.blocks:
        _certify_branch(blk.kspace_branch, params.cert_grid, iters=FULL_POWER_ITERS)
        if blk.image_branch is not None:
            _certify_branch(blk.image_branch, params.cert_grid, iters=FULL_POWER_ITERS)
    return params, float(stored_l)


def save_checkpoint(path, params: ConsistencyNetParams, certificate: float | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(write_ck01_bytes(params, certificate))


def load_checkpoint(path, verify: bool = True, tol: float = 1e-3):
    """Load a CK01 checkpoint; with ``verify`` the stored certificate is
    cross-checked against a fresh recomputation and must be < 1."""
    with open(path, "rb") as fh:
        params, stored_l = read_ck01_bytes(fh.read())
    if verify:
        cert = certified_lipschitz(params)
        if stored_l >= 1.0 or not cert.is_contractive:
            raise CertificateError(
                f"checkpoint certificate invalid: stored L={stored_l:.6f}, "
                f"recomputed L={cert.contraction_bound:.6f}"
            )
        if cert.contraction_bound > stored_l + tol:
            raise CertificateError(
                f"checkpoint certificate stale: stored L={stored_l:.6f} but kernels "
                f"certify at {cert.contraction_bound:.6f}; refusing to run"
            )
    return params, stored_l

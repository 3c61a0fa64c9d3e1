"""Plug-and-play solvers, RED schemes, and Langevin samplers for linear
imaging inverse problems, with classical denoisers and oracle-based checks."""

from .core import (
    ConfigError,
    DivergenceError,
    ParseError,
    PnpkitError,
    Rng,
    ShapeError,
    Signal,
    SolveError,
    Trace,
    add_gaussian_noise,
    as_array,
    as_signal,
    load_signal,
    psnr,
    read_trace,
    save_signal,
    write_trace,
)
from .denoisers import (
    Denoiser,
    SpectralDenoiserFamily,
    estimate_residual_lipschitz,
    gaussian_filter_denoiser,
    gaussian_kernel,
    gaussian_smoother,
    gs_denoiser,
    homogeneity_defect,
    jacobian_asymmetry,
    linear_spectral_denoiser,
    mmse_gmm_denoiser,
    nlm_denoiser,
    tikhonov_spectral_family,
    tv_denoiser,
)
from .gmm import (
    GmmPrior,
    load_gmm_prior,
    posterior_mean,
    smoothed_logpdf,
    smoothed_score,
    tweedie_check,
)
from .operators import (
    CirculantOp,
    DenseOp,
    DiagonalOp,
    LinearOp,
    MaskOp,
    SvdFactors,
    adjoint_defect,
    as_dense,
    compose,
    identity_op,
    load_dense_operator,
    make_blur,
    make_mask,
    naive_svd_solve,
    operator_norm,
    solve_shifted_normal,
    svd_factors,
    tikhonov_solve,
    to_dense_matrix,
    zero_op,
)
from .proximal import (
    ProxMap,
    box_prox,
    haar_inverse,
    haar_transform,
    l1_prox,
    linf_ball_prox,
    moreau_check,
    prox_box,
    prox_quadratic_fidelity,
    prox_tv,
    prox_wavelet_l1,
    quadratic_fidelity_prox,
    quadratic_prox,
    soft_threshold,
    squared_l2_prox,
    tv_conj_prox,
    tv_conjugate_prox,
    tv_prox,
    tv_value,
    wavelet_l1_prox,
    zero_prox,
)
from .sampling import (
    PosteriorOracle,
    SampleStats,
    UlaConfig,
    effective_sample_size,
    gaussian_posterior_oracle,
    run_pnp_ula,
    sample_stats,
    write_samples,
    write_stats_csv,
)
from .solvers import (
    FixedPointProblem,
    RegSlot,
    SmoothFn,
    SolverConfig,
    as_slot,
    drsdiff_operator,
    nesterov_t_sequence,
    run_admm,
    run_apgd,
    run_drs,
    run_fixed_point,
    run_gs_pnp,
    run_hqs,
    run_pgd,
    run_pgd_preconditioned,
    run_red_apg,
    run_red_gd,
    run_red_pg,
)

__version__ = "0.1.0"

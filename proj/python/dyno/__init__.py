"""Latent video dynamics lab: sampler, reward and policy-optimization primitives."""

from _dyno import (
    add_noise,
    ancestral_coeffs,
    ddim_sample_oracle,
    decode_latent,
    effective_rank,
    encode_frames,
    euler_ancestral_step,
    euler_discrete_step,
    gaussian_log_prob,
    gen_episode,
    group_advantages,
    karras_schedule,
    latent_reward,
    pixel_reward,
    svd_values,
)

__all__ = [
    "add_noise",
    "ancestral_coeffs",
    "ddim_sample_oracle",
    "decode_latent",
    "effective_rank",
    "encode_frames",
    "euler_ancestral_step",
    "euler_discrete_step",
    "gaussian_log_prob",
    "gen_episode",
    "group_advantages",
    "karras_schedule",
    "latent_reward",
    "pixel_reward",
    "svd_values",
]

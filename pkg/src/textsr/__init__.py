"""Text-prior-guided latent diffusion super-resolution, desk scale.

The package implements a complete, hermetic loop: synthetic scene and
caption generation, a parametric degradation chain, frequency-disentangled
text conditioning through four sequential cross-attention branches inside
a small latent-diffusion denoiser, multi-branch classifier-free guidance,
training, sampling, fidelity metrics, and an ablation harness.
"""

from .captions import (caption_scene, corrupt_captions, hf_vocabulary,
                       lf_vocabulary, mixed_captions)
from .dataset import (AnnotationRecord, BuildConfig, build_dataset,
                      load_manifest, select_top_segments)
from .degradation import DegradationParams, degrade
from .denoiser import ConditionalDenoiser, DenoiserConfig, parameter_count
from .diffusion import (NoiseSchedule, ddpm_step, forward_diffuse, make_schedule,
                        sample, sampling_timesteps, training_loss)
from .guidance import GuidanceSpec, build_negative_bundle, guided_noise
from .latent import ConvLatentCoder, PixelShuffleCoder
from .metrics import psnr, ssim
from .pipeline import RestorationPipeline, run_demo
from .priors import (CaptionSet, HashingTextEncoder, LrFeatureTokens,
                     PatchFeatureEncoder, PriorBundle, encode_caption_set,
                     encode_global, encode_hf, encode_lf, encode_lr_features)
from .scenes import (SceneObject, SceneSpec, SegmentRegion, generate_scene,
                     random_scene_spec)
from .train import ModelBundle, train_model

__version__ = "0.1.0"

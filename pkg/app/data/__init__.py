from .augment import AugmentParams, augment, center_crop, warp_image
from .dataset import Dataset, ImageRecord, label_summary
from .labels import KeywordRule, KeywordRuleset, default_ruleset, extract_label, load_ruleset, parse_ruleset
from .manifest import load_manifest, read_image, read_labels_csv, write_image, write_manifest
from .split import SPLITS, SplitManifest, split_by_patient
from .synth import SynthConfig, SynthResult, render_phantom, severity_class, synth_generate, write_synth

__all__ = [
    "AugmentParams",
    "Dataset",
    "ImageRecord",
    "KeywordRule",
    "KeywordRuleset",
    "SPLITS",
    "SplitManifest",
    "SynthConfig",
    "SynthResult",
    "augment",
    "center_crop",
    "default_ruleset",
    "extract_label",
    "label_summary",
    "load_manifest",
    "load_ruleset",
    "parse_ruleset",
    "read_image",
    "read_labels_csv",
    "render_phantom",
    "severity_class",
    "split_by_patient",
    "synth_generate",
    "warp_image",
    "write_image",
    "write_manifest",
    "write_synth",
]

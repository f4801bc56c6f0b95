"""Fixed quantities of the preprocessing chain and the file formats."""

TARGET_FS_HZ = 32.0
WINDOW_S = 8.0
WINDOW_SAMPLES = 256

ANTI_ALIAS_CUTOFF_HZ = 12.8
HIGH_PASS_CUTOFF_HZ = 0.5
# Lowpass taps per unit of decimation factor: 129 taps at 256 Hz, 513 at 1024 Hz.
ANTI_ALIAS_TAPS_PER_FACTOR = 16
HIGH_PASS_TAPS = 129

MIN_SEIZURE_S = 10.0
GA_MIN_WEEKS = 22.0
GA_MAX_WEEKS = 44.0

RECORD_SUFFIX = ".eegr"
BATCH_SUFFIX = ".eegw"
CHECKPOINT_SUFFIX = ".ckpt"

"""INI configuration parsing and field-named errors."""

import pytest

from sfb.config import SynthPanel, load_config, parse_config, with_fast
from sfb.dataset import DatedSplit, SplitSpec
from sfb.exceptions import ConfigError
from sfb.harness import ExperimentConfig

FULL = """
[experiment]
horizons = 12, 1, 3   # unordered on purpose
models = ARMA, G-SVR
lag = 2
seed = 9
eval_window = all
fast = yes

[split]
train = 0.5
valid = 0.3
test = 0.2

[svr]
C = 1, 10
epsilon = 0, 0.01
tol = 1e-4

[nn]
restarts = 2
q_schedule = 3: 5 8; 12: 16

[arma]
p_max = 2
q_max = 1

[metrics]
dm_loss = squared
dm_critical = 2.5

[synth]
regions = 3
n = 48
seed = 7
"""


class TestParse:
    def test_empty_gives_defaults(self):
        rc = parse_config("")
        assert rc.experiment == ExperimentConfig() and rc.synth is None

    def test_full(self):
        rc = parse_config(FULL)
        ex = rc.experiment
        assert ex.horizons == (1, 3, 12) and ex.models == ("ARMA", "G-SVR")
        assert ex.p == 2 and ex.seed == 9 and ex.eval_window is None and ex.fast
        assert ex.split == SplitSpec(0.5, 0.3, 0.2)
        assert ex.svr_grid.C == (1.0, 10.0) and ex.svr_grid.epsilon == (0.0, 0.01)
        assert ex.svr_grid.tol == 1e-4
        assert ex.nn_policy.restarts == 2
        assert ex.q_schedule == ((3, (5, 8)), (12, (16,)))
        assert ex.q_candidates(6) == (16,)
        assert (ex.arma_p_max, ex.arma_q_max) == (2, 1)
        assert ex.dm_loss == "squared" and ex.dm_critical == 2.5
        assert rc.synth == SynthPanel(3, 48, 7)

    def test_dated_split(self):
        rc = parse_config("[split]\ntrain_end = 2006-12\nvalid_end = 2011-12\n")
        assert rc.experiment.split == DatedSplit("2006-12", "2011-12", None)

    def test_load_and_fast(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text(FULL)
        rc = load_config(path)
        assert not with_fast(rc, False).experiment.fast
        assert with_fast(rc, False).experiment.horizons == rc.experiment.horizons


class TestErrors:
    @pytest.mark.parametrize("text, field", [
        ("[bogus]\nx = 1\n", "bogus"),
        ("[experiment]\nhorizon = 1\n", "experiment.horizon"),
        ("[experiment]\nhorizons = 1, x\n", "horizons"),
        ("[experiment]\nhorizons = 0\n", "horizons"),
        ("[experiment]\nhorizons = ,\n", "horizons"),
        ("[experiment]\nmodels = ARMA\n", "models"),
        ("[experiment]\nfast = maybe\n", "fast"),
        ("[split]\ntrain = 0.9\n", "split"),
        ("[split]\ntrain_end = 2006-12\n", "split"),
        ("[split]\ntrain_end = 2006-13\nvalid_end = 2011-12\n", "split.train_end"),
        ("[svr]\nC = 0, 1\n", "svr.C"),
        ("[svr]\nepsilon = -1\n", "svr.epsilon"),
        ("[nn]\nrestarts = 0\n", "nn"),
        ("[nn]\nq_schedule = 3 4\n", "nn.q_schedule"),
        ("[arma]\np_max = two\n", "arma.p_max"),
        ("[metrics]\ndm_loss = abs\n", "dm_loss"),
        ("[synth]\nn = 12\n", "synth.n"),
        ("no section header\n", "file"),
    ])
    def test_field_named(self, text, field):
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert exc.value.field == field

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            load_config(tmp_path / "absent.ini")
        assert exc.value.field == "config"

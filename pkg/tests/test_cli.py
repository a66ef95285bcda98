import io
import json
import tempfile
from pathlib import Path
from unittest import TestCase
from unittest.mock import patch

from perinstance_dp.cli import EXIT_BAD_ARGUMENTS, EXIT_CHECK_FAILED, EXIT_IO_ERROR, EXIT_OK, build_parser, config_from_args, main
from perinstance_dp.experiments import CheckResult, VerifyReport


class TestCli(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def run_main(self, argv: list[str]) -> tuple[int, str]:
        with patch("sys.stdout", new_callable=io.StringIO) as stdout:
            code = main(argv)
        return code, stdout.getvalue()

    def test_fig1_writes_outputs(self):
        out = self.dir / "fig1"
        code, stdout = self.run_main(["fig1", "--n", "100", "--d", "2", "--search-budget", "10", "--out", str(out)])
        self.assertEqual(code, EXIT_OK)
        self.assertTrue((out / "fig1_points.csv").exists())
        self.assertTrue((out / "fig1_summary.csv").exists())
        self.assertTrue(json.loads(stdout)["passed"])

    def test_flags_override_config_file(self):
        config = self.dir / "run.conf"
        config.write_text("n = 400\nsigma_mech = 2\nseed = 1\n")
        args = build_parser().parse_args(["fig2", "--config", str(config), "--seed", "7", "--lambda", "3", "--gammas", "1,2"])
        cfg = config_from_args(args)
        self.assertEqual((cfg.n, cfg.sigma_mech, cfg.seed, cfg.lam), (400, 2.0, 7, 3.0))
        self.assertEqual(cfg.gammas, (1.0, 2.0))
        self.assertEqual(cfg.experiment, "fig2")
        self.assertTrue(cfg.clip)

    def test_no_clip_flag(self):
        args = build_parser().parse_args(["report", "--no-clip", "--sigma", "8"])
        cfg = config_from_args(args)
        self.assertFalse(cfg.clip)
        self.assertEqual(cfg.sigma_mech, 8.0)

    def test_missing_data_file_argument(self):
        code, _ = self.run_main(["report", "--out", str(self.dir)])
        self.assertEqual(code, EXIT_BAD_ARGUMENTS)

    def test_invalid_parameter_value(self):
        code, _ = self.run_main(["fig1", "--delta", "2", "--out", str(self.dir)])
        self.assertEqual(code, EXIT_BAD_ARGUMENTS)

    def test_unreadable_data_file(self):
        with self.assertLogs("perinstance_dp.cli", level="ERROR"):
            code, _ = self.run_main(["release", "--data", str(self.dir / "absent.csv"), "--out", str(self.dir)])
        self.assertEqual(code, EXIT_IO_ERROR)

    def test_unknown_choice_exits_through_argparse(self):
        with patch("sys.stderr", new_callable=io.StringIO):
            with self.assertRaises(SystemExit) as ctx:
                main(["release", "--mechanism", "laplace"])
        self.assertEqual(ctx.exception.code, 2)

    @patch("perinstance_dp.experiments.run_verification")
    def test_failed_check_sets_exit_code(self, mock_run_verification):
        mock_run_verification.return_value = VerifyReport(checks=[CheckResult("broken", False, 0)], seed=0)
        code, stdout = self.run_main(["verify", "--out", str(self.dir)])
        self.assertEqual(code, EXIT_CHECK_FAILED)
        self.assertFalse(json.loads(stdout)["passed"])
        payload = json.loads((self.dir / "verify.json").read_text())
        self.assertEqual(payload["failed"], ["broken"])

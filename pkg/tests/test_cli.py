import json

import numpy as np
import pytest

from dain.checkpoint import load_checkpoint, save_checkpoint
from dain.cli import main
from dain.data import build_dataset, leave_one_out_split, parse_movielens
from dain.model import EmbeddingTable, MfModel
from dain.numerics import STREAM_SPLIT, SeededRng
from helpers import write_movielens, write_tsv_file


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def toy_rows(num_users=10, num_items=15, per_user=4, seed=200):
    rng = SeededRng(seed)
    rows = []
    for u in range(1, num_users + 1):
        picks = rng.sample_without_replacement(np.arange(1, num_items + 1), per_user)
        for i in picks:
            rows.append((u, int(i), 1 + rng.randrange(5), rng.randrange(10**8)))
    return rows


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "toy.dat"
    write_movielens(path, toy_rows())
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "epochs": 3,
        "embedding_dim": 4,
        "layers": [8, 4],
        "eval_negatives": 5,
        "seed": 11,
    }))
    return path


class TestStats:
    def test_toy_counts(self, capsys, tmp_path):
        path = tmp_path / "three.dat"
        write_movielens(path, [(1, 1, 5, 10), (1, 2, 3, 11), (2, 1, 1, 12)])
        code, out, _ = run(capsys, "stats", "--data", str(path))
        assert code == 0
        assert out == "users=2 items=2 interactions=3 sparsity=75.00%\n"

    def test_missing_file_is_data_error(self, capsys, tmp_path):
        code, out, err = run(capsys, "stats", "--data", str(tmp_path / "nope.dat"))
        assert code == 2
        assert "nope.dat" in err

    def test_malformed_line_names_path_and_line(self, capsys, tmp_path):
        path = tmp_path / "bad.dat"
        path.write_text("1::1::5::10\n1::2::oops::11\n")
        code, _, err = run(capsys, "stats", "--data", str(path))
        assert code == 2
        assert "bad.dat" in err and "line 2" in err

    def test_tsv_format(self, capsys, tmp_path):
        path = tmp_path / "toy.tsv"
        write_tsv_file(path, [(1, 1, 5, 10), (2, 2, 3, 11)], header=True)
        code, out, _ = run(capsys, "stats", "--data", str(path), "--format", "tsv")
        assert code == 0
        assert "interactions=2" in out


class TestTrain:
    def test_loss_line_per_epoch(self, capsys, data_file, config_file, tmp_path):
        out_path = tmp_path / "model.ckpt"
        code, out, _ = run(capsys, "train", "--config", str(config_file),
                           "--data", str(data_file), "--out", str(out_path))
        assert code == 0
        lines = out.strip().split("\n")
        assert len(lines) == 3
        for e, line in enumerate(lines, start=1):
            assert line.startswith(f"epoch={e} loss=")
            float(line.split("loss=")[1])
        assert out_path.exists()

    def test_two_runs_byte_identical(self, capsys, data_file, config_file, tmp_path):
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        code1, out1, _ = run(capsys, "train", "--config", str(config_file),
                             "--data", str(data_file), "--out", str(p1))
        code2, out2, _ = run(capsys, "train", "--config", str(config_file),
                             "--data", str(data_file), "--out", str(p2))
        assert code1 == code2 == 0
        assert out1 == out2
        assert p1.read_bytes() == p2.read_bytes()

    def test_unknown_config_key_named(self, capsys, data_file, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"learning_rat": 0.5}')
        code, _, err = run(capsys, "train", "--config", str(cfg),
                           "--data", str(data_file), "--out", str(tmp_path / "x.ckpt"))
        assert code == 1
        assert "learning_rat" in err

    def test_negative_learning_rate_rejected(self, capsys, data_file, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"learning_rate": -1}')
        code, _, err = run(capsys, "train", "--config", str(cfg),
                           "--data", str(data_file), "--out", str(tmp_path / "x.ckpt"))
        assert code == 1
        assert "learning_rate" in err

    def test_mf_model_trains(self, capsys, data_file, tmp_path):
        cfg = tmp_path / "mf.json"
        cfg.write_text('{"model": "mf", "embedding_dim": 4, "epochs": 2, "eval_negatives": 5}')
        out_path = tmp_path / "mf.ckpt"
        code, out, _ = run(capsys, "train", "--config", str(cfg),
                           "--data", str(data_file), "--out", str(out_path))
        assert code == 0
        model, _, _, _ = load_checkpoint(out_path)
        assert isinstance(model, MfModel)


class TestEvaluate:
    def trained(self, capsys, data_file, config_file, tmp_path):
        out_path = tmp_path / "model.ckpt"
        run(capsys, "train", "--config", str(config_file),
            "--data", str(data_file), "--out", str(out_path))
        return out_path

    def test_json_report(self, capsys, data_file, config_file, tmp_path):
        ckpt = self.trained(capsys, data_file, config_file, tmp_path)
        code, out, _ = run(capsys, "evaluate", "--checkpoint", str(ckpt),
                           "--data", str(data_file), "--negatives", "5")
        assert code == 0
        doc = json.loads(out)
        assert doc["k"] == 10
        assert set(doc) == {"k", "map", "ndcg", "hr", "users_evaluated", "users_skipped"}
        assert 0.0 <= doc["hr"] <= 1.0

    def test_byte_identical_across_runs(self, capsys, data_file, config_file, tmp_path):
        ckpt = self.trained(capsys, data_file, config_file, tmp_path)
        _, out1, _ = run(capsys, "evaluate", "--checkpoint", str(ckpt),
                         "--data", str(data_file), "--negatives", "5")
        _, out2, _ = run(capsys, "evaluate", "--checkpoint", str(ckpt),
                         "--data", str(data_file), "--negatives", "5")
        assert out1 == out2

    def test_id_space_mismatch_reports_sizes(self, capsys, data_file, config_file, tmp_path):
        ckpt = self.trained(capsys, data_file, config_file, tmp_path)
        other = tmp_path / "other.dat"
        write_movielens(other, toy_rows(num_users=4, num_items=6, per_user=3, seed=300))
        code, _, err = run(capsys, "evaluate", "--checkpoint", str(ckpt),
                           "--data", str(other), "--negatives", "2")
        assert code == 2
        assert "10" in err and "4" in err

    def test_oracle_checkpoint_gets_perfect_hit_rate(self, capsys, tmp_path):
        data_path = tmp_path / "oracle.dat"
        write_movielens(data_path, toy_rows(num_users=6, num_items=20, per_user=4, seed=77))
        with open(data_path, "rb") as f:
            ds, user_map, item_map = build_dataset(parse_movielens(f))
        seed = 5
        split = leave_one_out_split(ds, 5, SeededRng(seed, STREAM_SPLIT))
        assert split.test
        # user u's embedding is one-hot row u; the held-out item's embedding
        # is 10 * that same one-hot, so only (u, positive_of_u) scores high
        k = ds.num_users
        user_vecs = np.eye(ds.num_users, k)
        item_vecs = np.zeros((ds.num_items, k))
        for case in split.test:
            item_vecs[case.item, case.user] = 10.0
        oracle = MfModel(
            user_table=EmbeddingTable(ds.num_users, k, user_vecs),
            item_table=EmbeddingTable(ds.num_items, k, item_vecs),
            user_bias=np.zeros(ds.num_users),
            item_bias=np.zeros(ds.num_items),
            global_bias=0.0,
        )
        ckpt = tmp_path / "oracle.ckpt"
        save_checkpoint(oracle, user_map, item_map, seed, ckpt)
        code, out, _ = run(capsys, "evaluate", "--checkpoint", str(ckpt),
                           "--data", str(data_path), "--negatives", "5",
                           "--seed", str(seed))
        assert code == 0
        assert json.loads(out)["hr"] == 1.0

    def test_checkpoint_errors_exit_3(self, capsys, data_file, config_file, tmp_path):
        ckpt = self.trained(capsys, data_file, config_file, tmp_path)
        blob = bytearray(ckpt.read_bytes())
        blob[0] = ord("X")
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(blob))
        code, _, err = run(capsys, "evaluate", "--checkpoint", str(bad),
                           "--data", str(data_file), "--negatives", "5")
        assert code == 3
        assert "magic" in err


class TestRecommend:
    def trained(self, capsys, data_file, config_file, tmp_path):
        out_path = tmp_path / "model.ckpt"
        run(capsys, "train", "--config", str(config_file),
            "--data", str(data_file), "--out", str(out_path))
        return out_path

    def test_zero_n_prints_nothing(self, capsys, data_file, config_file, tmp_path):
        ckpt = self.trained(capsys, data_file, config_file, tmp_path)
        code, out, _ = run(capsys, "recommend", "--checkpoint", str(ckpt),
                           "--user", "3", "--n", "0", "--hour", "12", "--weekday", "2")
        assert code == 0
        assert out == ""

    def test_scores_non_increasing_and_top1_is_argmax(self, capsys, data_file, config_file, tmp_path):
        ckpt = self.trained(capsys, data_file, config_file, tmp_path)
        code, out, _ = run(capsys, "recommend", "--checkpoint", str(ckpt),
                           "--user", "3", "--n", "8", "--hour", "12", "--weekday", "2")
        assert code == 0
        lines = [line.split() for line in out.strip().split("\n")]
        assert [int(l[0]) for l in lines] == list(range(1, 9))
        scores = [float(l[2]) for l in lines]
        assert all(a >= b for a, b in zip(scores, scores[1:]))
        # brute-force argmax over the full catalog agrees with rank 1
        model, user_map, item_map, _ = load_checkpoint(ckpt)
        u = user_map.index("3")
        all_scores = model.predict_batch(u, range(model.num_items), (12, 2))
        best = min(range(model.num_items), key=lambda i: (-all_scores[i], i))
        assert lines[0][1] == item_map.raw(best)

    def test_exclusions_remove_seen_items(self, capsys, data_file, config_file, tmp_path):
        ckpt = self.trained(capsys, data_file, config_file, tmp_path)
        _, _, item_map, _ = load_checkpoint(ckpt)
        with open(data_file, "rb") as f:
            log = parse_movielens(f)
        seen = {rec.item for rec in log.records if rec.user == "3"}
        code, out, _ = run(capsys, "recommend", "--checkpoint", str(ckpt),
                           "--user", "3", "--n", "15", "--hour", "0", "--weekday", "0",
                           "--data", str(data_file))
        assert code == 0
        recommended = {line.split()[1] for line in out.strip().split("\n")}
        assert not (recommended & seen)

    def test_unknown_user_names_raw_id(self, capsys, data_file, config_file, tmp_path):
        ckpt = self.trained(capsys, data_file, config_file, tmp_path)
        code, _, err = run(capsys, "recommend", "--checkpoint", str(ckpt),
                           "--user", "ghost", "--n", "3", "--hour", "0", "--weekday", "0")
        assert code == 1
        assert "ghost" in err

    def test_context_flags_required_for_context_model(self, capsys, data_file, config_file, tmp_path):
        ckpt = self.trained(capsys, data_file, config_file, tmp_path)
        code, _, err = run(capsys, "recommend", "--checkpoint", str(ckpt),
                           "--user", "3", "--n", "3")
        assert code == 1
        assert "--hour" in err


class TestGradcheck:
    def test_shipped_gradients_pass(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--seed", "3")
        assert code == 0
        assert out.startswith("max_rel_err=")
        assert float(out.strip().split("=")[1]) < 1e-4

    def test_injected_bug_detected(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--seed", "3", "--grad-scale", "2.0")
        assert code == 4
        assert float(out.strip().split("=")[1]) > 0.3

    def test_mf_config(self, capsys, tmp_path):
        cfg = tmp_path / "mf.json"
        cfg.write_text('{"model": "mf", "embedding_dim": 3}')
        code, out, _ = run(capsys, "gradcheck", "--config", str(cfg), "--seed", "4")
        assert code == 0


class TestUsageErrors:
    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_missing_required_argument(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["stats"])
        assert exc.value.code == 1

    def test_bad_choice_value(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["stats", "--data", "x", "--format", "parquet"])
        assert exc.value.code == 1

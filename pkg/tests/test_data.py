import numpy as np
import numpy.testing as npt
import pytest

from contlearn.data import (
    AugParams,
    AugPolicy,
    Dataset,
    apply_aug,
    augment,
    batches,
    draw_aug_params,
    load_cifar100,
    load_raw_rgb_dump,
    load_tensor_archive,
    split_tasks,
    split_train_test,
    synth_tasks,
    write_tensor_archive,
)
from contlearn.errors import ArgumentError, ConfigError, DataError, FormatError
from contlearn.tensor import Prng


def make_cifar_file(path, n_records, labels=None):
    rng = np.random.default_rng(1234)
    rec = rng.integers(0, 256, size=(n_records, 3074), dtype=np.uint8)
    if labels is None:
        labels = np.arange(n_records) % 100
    rec[:, 1] = labels
    rec[:, 0] = np.asarray(labels) // 5  # coarse byte, ignored by the loader
    path.write_bytes(rec.tobytes())
    return rec


class TestCifarLoader:
    def test_full_size_file(self, tmp_path):
        p = tmp_path / "train.bin"
        make_cifar_file(p, 50_000)
        ds = load_cifar100(p)
        assert len(ds) == 50_000
        assert ds.num_classes == 100
        counts = np.bincount(ds.labels, minlength=100)
        assert (counts == 500).all()
        assert ds.images.shape == (50_000, 3, 32, 32)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_single_record(self, tmp_path):
        p = tmp_path / "one.bin"
        rec = make_cifar_file(p, 1, labels=[7])
        ds = load_cifar100(p)
        assert len(ds) == 1 and ds.labels[0] == 7
        npt.assert_array_equal(ds.images[0],
                               rec[0, 2:].reshape(3, 32, 32).astype(np.float32) / 255.0)

    def test_wrong_size(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"\x00" * 3073)
        with pytest.raises(FormatError):
            load_cifar100(p)

    def test_label_out_of_range(self, tmp_path):
        p = tmp_path / "bad.bin"
        make_cifar_file(p, 2, labels=[3, 130])
        with pytest.raises(FormatError):
            load_cifar100(p)


class TestTensorArchive:
    def test_round_trip_from_cifar(self, tmp_path):
        src = tmp_path / "train.bin"
        make_cifar_file(src, 40)
        ds = load_cifar100(src)
        arc = tmp_path / "out.tia"
        write_tensor_archive(arc, ds)
        back = load_tensor_archive(arc)
        npt.assert_array_equal(back.images, ds.images)
        npt.assert_array_equal(back.labels, ds.labels)

    def test_truncated_payload(self, tmp_path):
        src = tmp_path / "train.bin"
        make_cifar_file(src, 4)
        arc = tmp_path / "out.tia"
        write_tensor_archive(arc, load_cifar100(src))
        blob = arc.read_bytes()
        arc.write_bytes(blob[:-10])
        with pytest.raises(FormatError):
            load_tensor_archive(arc)

    def test_bad_magic(self, tmp_path):
        arc = tmp_path / "out.tia"
        arc.write_bytes(b"XXXX" + b"\x00" * 40)
        with pytest.raises(FormatError):
            load_tensor_archive(arc)

    def test_empty_archive_rejected(self, tmp_path):
        ds = Dataset(np.zeros((0, 3, 4, 4), dtype=np.float32), np.zeros(0, dtype=np.int64))
        with pytest.raises(FormatError):
            write_tensor_archive(tmp_path / "e.tia", ds)

    def test_zero_count_header_rejected(self, tmp_path):
        import struct

        arc = tmp_path / "z.tia"
        arc.write_bytes(b"TIA1" + struct.pack("<IQIII", 1, 0, 3, 4, 4))
        with pytest.raises(FormatError):
            load_tensor_archive(arc)


class TestRawDump:
    def test_load(self, tmp_path):
        import json

        n, h, w = 6, 4, 5
        rng = np.random.default_rng(0)
        raw = rng.integers(0, 256, size=(n, 3, h, w), dtype=np.uint8)
        labels = np.arange(n, dtype="<u2")
        (tmp_path / "images.raw").write_bytes(raw.tobytes())
        (tmp_path / "labels.bin").write_bytes(labels.tobytes())
        (tmp_path / "shape.json").write_text(json.dumps({"n": n, "height": h, "width": w}))
        ds = load_raw_rgb_dump(tmp_path)
        assert len(ds) == n
        npt.assert_array_equal(ds.images, raw.astype(np.float32) / 255.0)

    def test_label_count_mismatch(self, tmp_path):
        import json

        (tmp_path / "images.raw").write_bytes(b"\x00" * (2 * 3 * 2 * 2))
        (tmp_path / "labels.bin").write_bytes(b"\x00" * 6)
        (tmp_path / "shape.json").write_text(json.dumps({"n": 2, "height": 2, "width": 2}))
        with pytest.raises(FormatError):
            load_raw_rgb_dump(tmp_path)


class TestSynth:
    def test_deterministic(self):
        a = synth_tasks(4, 5, 6, 3.0, Prng(9))
        b = synth_tasks(4, 5, 6, 3.0, Prng(9))
        npt.assert_array_equal(a.images, b.images)
        npt.assert_array_equal(a.labels, b.labels)

    def test_infinite_separation_nearest_template(self):
        ds = synth_tasks(6, 4, 5, np.inf, Prng(3))
        templates = ds.images[::4]  # every sample equals its class template
        for i in range(len(ds)):
            d = ((templates - ds.images[i]) ** 2).sum(axis=(1, 2, 3))
            assert d.argmin() == ds.labels[i]

    def test_linear_probe_separable(self):
        ds = synth_tasks(10, 40, 8, 4.0, Prng(5))
        x = ds.images.reshape(len(ds), -1).astype(np.float64)
        x = np.hstack([x, np.ones((len(x), 1))])
        y = np.eye(10)[ds.labels]
        half = len(x) // 2
        order = np.random.default_rng(0).permutation(len(x))
        tr, te = order[:half], order[half:]
        w, *_ = np.linalg.lstsq(x[tr], y[tr], rcond=None)
        acc = (np.argmax(x[te] @ w, axis=1) == ds.labels[te]).mean()
        assert acc > 0.9

    def test_bad_args(self):
        with pytest.raises(ArgumentError):
            synth_tasks(1, 5, 4, 2.0, Prng(0))
        with pytest.raises(ArgumentError):
            synth_tasks(3, 1, 4, 2.0, Prng(0))


class TestSplitTasks:
    def make_sets(self, per_class_train=50, per_class_test=10, classes=100):
        rng = Prng(77)
        n_tr = classes * per_class_train
        n_te = classes * per_class_test
        tr = Dataset(rng.uniform(0, 1, size=(n_tr, 3, 4, 4)).astype(np.float32),
                     np.repeat(np.arange(classes), per_class_train))
        te = Dataset(rng.uniform(0, 1, size=(n_te, 3, 4, 4)).astype(np.float32),
                     np.repeat(np.arange(classes), per_class_test))
        return tr, te

    def test_twenty_split_sizes(self, tmp_path):
        # 500 train images/class as in the real dataset: 5 classes x 500 = 2500,
        # 10% val floor = 250, train = 2250.
        rng = Prng(1)
        tr = Dataset(np.zeros((50_000, 3, 2, 2), dtype=np.float32),
                     np.repeat(np.arange(100), 500))
        te = Dataset(np.zeros((10_000, 3, 2, 2), dtype=np.float32),
                     np.repeat(np.arange(100), 100))
        seq = split_tasks(tr, te, 20, seed=3)
        assert len(seq.tasks) == 20
        for task in seq.tasks:
            assert task.num_classes == 5
            assert len(task.y_train) == 2250
            assert len(task.y_val) == 250
            assert len(task.y_test) == 500
            assert set(np.unique(task.y_train)) <= set(range(5))

    def test_same_seed_identical(self):
        tr, te = self.make_sets()
        a = split_tasks(tr, te, 10, seed=5)
        b = split_tasks(tr, te, 10, seed=5)
        npt.assert_array_equal(a.class_order, b.class_order)
        for ta, tb in zip(a.tasks, b.tasks):
            npt.assert_array_equal(ta.x_train, tb.x_train)
            npt.assert_array_equal(ta.y_val, tb.y_val)

    def test_different_seeds_differ(self):
        tr, te = self.make_sets()
        a = split_tasks(tr, te, 10, seed=5)
        b = split_tasks(tr, te, 10, seed=6)
        assert not np.array_equal(a.class_order, b.class_order)

    def test_indivisible(self):
        tr, te = self.make_sets()
        with pytest.raises(ConfigError):
            split_tasks(tr, te, 7, seed=0)

    def test_disjoint_cover(self):
        tr, te = self.make_sets(classes=20)
        seq = split_tasks(tr, te, 5, seed=2)
        all_classes = np.concatenate([t.classes for t in seq.tasks])
        assert len(all_classes) == 20
        assert len(np.unique(all_classes)) == 20

    def test_split_train_test_holdout(self):
        ds = synth_tasks(4, 10, 4, 3.0, Prng(8))
        tr, te = split_train_test(ds, 3)
        assert len(tr) == 4 * 7 and len(te) == 4 * 3
        counts = np.bincount(te.labels, minlength=4)
        assert (counts == 3).all()


class TestAugment:
    def gray(self, v=0.5, h=6, w=6):
        return np.full((3, h, w), v, dtype=np.float32)

    def rand_img(self, seed=0, h=6, w=6):
        return Prng(seed).uniform(0, 1, size=(3, h, w)).astype(np.float32)

    def test_disabled_identity(self):
        img = self.rand_img()
        out = augment(img, AugPolicy(enabled=False), Prng(1))
        assert out is img

    def test_neutral_policy_identity(self):
        img = self.rand_img(3)
        policy = AugPolicy(enabled=True, max_translate_px=0, hflip_prob=0.0,
                           color_jitter=0.0, hue_jitter=0.0)
        npt.assert_array_equal(augment(img, policy, Prng(2)), img)

    def test_neutral_params_identity(self):
        img = self.rand_img(4)
        npt.assert_array_equal(apply_aug(img, AugParams()), img)

    def test_brightness(self):
        out = apply_aug(self.gray(0.5), AugParams(brightness=1.3))
        npt.assert_allclose(out, 0.65, rtol=1e-6)

    def test_contrast_blend(self):
        img = self.rand_img(5)
        out = apply_aug(img, AugParams(contrast=0.0))
        lum = 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
        npt.assert_allclose(out, np.clip(lum.mean(), 0, 1), atol=1e-6)

    def test_translation_values_come_from_input(self):
        img = self.rand_img(6)
        out = apply_aug(img, AugParams(dx=2, dy=-1))
        assert np.isin(out, img).all()

    def test_flip(self):
        img = self.rand_img(7)
        out = apply_aug(img, AugParams(flip=True))
        npt.assert_array_equal(out, img[:, :, ::-1])

    def test_output_in_bounds(self):
        policy = AugPolicy(enabled=True)
        for seed in range(40):
            out = augment(self.rand_img(seed + 10), policy, Prng(seed, stream=3))
            assert out.min() >= 0.0 and out.max() <= 1.0
            assert out.shape == (3, 6, 6)

    def test_hue_shift_changes_channels_not_value(self):
        img = self.rand_img(11)
        out = apply_aug(img, AugParams(hue=0.25))
        npt.assert_allclose(out.max(axis=0), img.max(axis=0), atol=1e-5)

    def test_draw_params_deterministic(self):
        policy = AugPolicy(enabled=True)
        assert draw_aug_params(policy, Prng(5, stream=9)) == \
            draw_aug_params(policy, Prng(5, stream=9))


class TestBatches:
    def setup_method(self):
        rng = Prng(31)
        self.x = rng.uniform(0, 1, size=(130, 3, 4, 4)).astype(np.float32)
        self.y = np.arange(130, dtype=np.int64) % 5

    def test_batch_sizes(self):
        sizes = [len(yb) for _, yb, _ in batches(self.x, self.y, 64, Prng(1), epoch=0)]
        assert sizes == [64, 64, 2]

    def test_same_seed_identical_including_augment(self):
        policy = AugPolicy(enabled=True, max_translate_px=1)
        a = list(batches(self.x, self.y, 32, Prng(2), 1, policy=policy))
        b = list(batches(self.x, self.y, 32, Prng(2), 1, policy=policy))
        for (xa, ya, _), (xb, yb, _) in zip(a, b):
            npt.assert_array_equal(xa, xb)
            npt.assert_array_equal(ya, yb)

    def test_no_augment_passthrough_bit_identical(self):
        perm_rng = Prng(3)
        got = np.concatenate([xb for xb, _, _ in batches(self.x, self.y, 50, perm_rng, 2)])
        perm = Prng(3).fork(2 ** 62 + 2).permutation(130)
        npt.assert_array_equal(got, self.x[perm])

    def test_empty_split(self):
        with pytest.raises(DataError):
            next(iter(batches(self.x[:0], self.y[:0], 4, Prng(0), 0)))

    def test_augmentation_independent_of_batch_size(self):
        policy = AugPolicy(enabled=True)
        a = {}
        for bs in (16, 64):
            rows = {}
            perm = Prng(4).fork(2 ** 62 + 0).permutation(130)
            pos = 0
            for xb, _, _ in batches(self.x, self.y, bs, Prng(4), 0, policy=policy):
                for row in range(len(xb)):
                    rows[int(perm[pos])] = xb[row].copy()
                    pos += 1
            a[bs] = rows
        for idx in a[16]:
            npt.assert_array_equal(a[16][idx], a[64][idx])

import numpy as np
import pytest

from incseg.classify import Prediction
from incseg.errors import FormatError
from incseg.formats import (
    load_bank,
    read_embeddings,
    read_label_map,
    read_mask_set,
    read_predictions,
    save_bank,
    write_embeddings,
    write_label_map,
    write_mask_set,
    write_predictions,
)
from incseg.maskagg import RawMask, RawMaskSet
from incseg.protocol import read_region_labels, write_region_labels
from incseg.prototypes import PrototypeBank

from synth import embedding, random_mask_set, unit_vector


def random_bank(rng):
    dim = int(rng.integers(2, 17))
    bank = PrototypeBank(dim)
    step = 0
    for cid in sorted(rng.choice(np.arange(1, 40), size=int(rng.integers(1, 6)), replace=False)):
        count = int(rng.integers(2, 8))
        embs = [embedding(f"im{j}", j, unit_vector(rng, dim)) for j in range(count)]
        name = f"name-{cid}" if rng.random() < 0.7 else f"uniçode-{cid}"
        bank.register_class(
            int(cid), name, embs, variance_threshold=float(rng.choice([0.0, 0.4])),
            k=int(rng.integers(1, 6)), seed=int(cid), step=step,
        )
        if rng.random() < 0.5:
            step += 1
    return bank


class TestMaskSetRoundTrip:
    def test_write_read_write_identity(self, rng):
        for _ in range(200):
            ms = random_mask_set(rng, max_side=16, max_masks=6)
            payload = write_mask_set(ms)
            again = write_mask_set(read_mask_set(payload, image_id=ms.image_id))
            assert payload == again

    def test_contents_survive(self, rng):
        ms = random_mask_set(rng)
        back = read_mask_set(write_mask_set(ms), image_id=ms.image_id)
        assert back.height == ms.height and back.width == ms.width
        assert len(back.masks) == len(ms.masks)
        for a, b in zip(ms.masks, back.masks):
            assert a.area == b.area
            assert np.array_equal(a.pixels, b.pixels)

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            read_mask_set(b"XXXX" + b"\0" * 20)

    def test_bad_version(self, rng):
        payload = bytearray(write_mask_set(random_mask_set(rng)))
        payload[4] = 9
        with pytest.raises(FormatError):
            read_mask_set(bytes(payload))

    def test_truncation(self, rng):
        ms = random_mask_set(rng)
        payload = write_mask_set(ms)
        if len(payload) > 17:
            with pytest.raises(FormatError):
                read_mask_set(payload[:-1])

    def test_area_mismatch_detected(self):
        mask = RawMask(pixels=np.ones((2, 2), dtype=np.uint8), area=3)
        with pytest.raises(FormatError):
            write_mask_set(RawMaskSet("img", 2, 2, [mask]))

    def test_rle_sum_checked(self):
        ms = RawMaskSet("img", 2, 2, [RawMask.from_pixels(np.eye(2, dtype=np.uint8))])
        payload = bytearray(write_mask_set(ms))
        payload[-4:] = (99).to_bytes(4, "little")  # corrupt the final run length
        with pytest.raises(FormatError):
            read_mask_set(bytes(payload))


class TestLabelMapRoundTrip:
    def test_write_read_write_identity(self, rng):
        for _ in range(200):
            h, w = int(rng.integers(1, 32)), int(rng.integers(1, 32))
            labels = rng.integers(0, 300, size=(h, w))
            payload = write_label_map(labels)
            assert write_label_map(read_label_map(payload)) == payload

    def test_values_survive(self, rng):
        labels = rng.integers(0, 65536, size=(7, 5))
        assert np.array_equal(read_label_map(write_label_map(labels)), labels)

    def test_rejects_out_of_range(self):
        with pytest.raises(FormatError):
            write_label_map(np.array([[70000]]))
        with pytest.raises(FormatError):
            write_label_map(np.array([[-1]]))

    def test_trailing_bytes_rejected(self, rng):
        payload = write_label_map(rng.integers(0, 4, size=(3, 3)))
        with pytest.raises(FormatError):
            read_label_map(payload + b"\0")


class TestEmbeddingsRoundTrip:
    def test_write_read_write_identity(self, rng):
        for _ in range(200):
            dim = int(rng.integers(1, 33))
            count = int(rng.integers(0, 10))
            embs = [
                embedding(
                    f"im-{rng.integers(0, 100)}",
                    int(rng.integers(0, 1000)),
                    np.asarray(unit_vector(rng, dim), dtype=np.float32),
                    gt_class=int(rng.choice([-1, 1, 2, 17])),
                )
                for _ in range(count)
            ]
            payload = write_embeddings(embs, dim)
            assert write_embeddings(read_embeddings(payload), dim) == payload

    def test_fields_survive(self, rng):
        embs = [embedding("picture", 4, np.asarray(unit_vector(rng, 8), np.float32), gt_class=-1)]
        back = read_embeddings(write_embeddings(embs, 8))
        assert back[0].image_id == "picture"
        assert back[0].region_id == 4
        assert back[0].gt_class == -1
        assert np.array_equal(back[0].vector, embs[0].vector.astype(np.float32))

    def test_dim_mismatch_rejected(self, rng):
        with pytest.raises(FormatError):
            write_embeddings([embedding("a", 1, unit_vector(rng, 4))], dim=8)


class TestBankRoundTrip:
    def test_empty_bank(self):
        bank = PrototypeBank(dim=16)
        assert load_bank(save_bank(bank)) == bank

    def test_mixed_bank_round_trip(self, rng):
        for _ in range(200):
            bank = random_bank(rng)
            payload = save_bank(bank)
            restored = load_bank(payload)
            assert restored == bank
            assert save_bank(restored) == payload

    def test_corrupted_magic(self, rng):
        payload = bytearray(save_bank(random_bank(rng)))
        payload[:4] = b"NOPE"
        with pytest.raises(FormatError):
            load_bank(bytes(payload))

    def test_truncation(self, rng):
        payload = save_bank(random_bank(rng))
        with pytest.raises(FormatError):
            load_bank(payload[: len(payload) // 2])


class TestTextFormats:
    def test_predictions_round_trip(self, rng):
        preds = [
            Prediction(
                image_id=f"img{i}",
                region_id=i,
                predicted_class=int(rng.integers(0, 10)),
                best_similarity=float(rng.uniform(-1, 1)),
            )
            for i in range(20)
        ]
        text = write_predictions(preds)
        back = read_predictions(text)
        for a, b in zip(preds, back):
            assert (a.image_id, a.region_id, a.predicted_class) == (
                b.image_id,
                b.region_id,
                b.predicted_class,
            )
            # 9 significant digits keep float32-scale similarity exactly
            assert abs(a.best_similarity - b.best_similarity) < 1e-9
        assert write_predictions(back) == text

    def test_prediction_similarity_formatting(self):
        text = write_predictions(
            [Prediction(image_id="a", region_id=1, predicted_class=2, best_similarity=0.123456789123)]
        )
        assert text == "a\t1\t2\t0.123456789\n"

    def test_malformed_prediction_line(self):
        with pytest.raises(FormatError):
            read_predictions("img\t1\t2\n")

    def test_region_labels_round_trip(self):
        from incseg.protocol import RegionLabel

        labels = [
            RegionLabel("a", 1, 3, 0.75),
            RegionLabel("a", 2, -1, 0.25),
        ]
        text = write_region_labels(labels)
        assert read_region_labels(text) == labels

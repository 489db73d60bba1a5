import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from xfer.data_io import (
    LabelVector,
    as_feature_matrix,
    as_image_set,
    read_feature_csv,
    read_features,
    read_labels,
    read_matrix_csv,
    read_tensor_binary,
    write_feature_csv,
    write_labels,
    write_tensor_binary,
)
from xfer.errors import (
    BadMagicError,
    DataError,
    FormatError,
    ParseError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
)


def write(tmp_path, name, text, newline="\n"):
    p = tmp_path / name
    p.write_bytes(text.replace("\n", newline).encode("utf-8"))
    return p


class TestFeatureCSV:
    def test_two_rows(self, tmp_path):
        F = read_feature_csv(write(tmp_path, "f.csv", "1,2\n3,4"))
        np.testing.assert_array_equal(F, [[1, 2], [3, 4]])

    def test_empty_file(self, tmp_path):
        with pytest.raises(FormatError, match="no rows"):
            read_feature_csv(write(tmp_path, "f.csv", ""))

    def test_ragged_row_names_line(self, tmp_path):
        with pytest.raises(FormatError, match="line 2") as info:
            read_feature_csv(write(tmp_path, "f.csv", "1,2\n3"))
        assert info.value.line == 2

    def test_parse_error_coordinates(self, tmp_path):
        with pytest.raises(ParseError) as info:
            read_feature_csv(write(tmp_path, "f.csv", "1,2\n3,abc\n"))
        assert (info.value.line, info.value.column) == (2, 2)

    @pytest.mark.parametrize("cell", ["nan", "inf", "1,5", "0x10", "1e999"])
    def test_rejects_non_decimal(self, tmp_path, cell):
        with pytest.raises(DataError):
            read_feature_csv(write(tmp_path, "f.csv", f"1,2\n3,{cell}\n"))

    def test_header_and_dos_line_endings(self, tmp_path):
        p = write(tmp_path, "f.csv", "a,b\n1.5,-2e-3\n.5,+4.\n", newline="\r\n")
        F = read_feature_csv(p, has_header=True)
        np.testing.assert_array_equal(F, [[1.5, -0.002], [0.5, 4.0]])

    def test_single_row_rejected(self, tmp_path):
        with pytest.raises(DataError, match="at least 2 rows"):
            read_feature_csv(write(tmp_path, "f.csv", "1,2\n"))

    def test_write_read_round_trip(self, tmp_path, rng):
        F = rng.standard_normal((7, 3)) * 10.0 ** rng.integers(-30, 30, (7, 3))
        write_feature_csv(tmp_path / "f.csv", F)
        np.testing.assert_array_equal(read_feature_csv(tmp_path / "f.csv"), F)

    def test_matrix_reader_keeps_one_row(self, tmp_path):
        np.testing.assert_array_equal(read_matrix_csv(write(tmp_path, "m.csv", "1,2\n")), [[1, 2]])


class TestAsFeatureMatrix:
    def test_vector_becomes_column(self):
        assert as_feature_matrix([1, 2, 3]).shape == (3, 1)

    def test_non_finite(self):
        with pytest.raises(DataError, match="row 1, column 0"):
            as_feature_matrix([[1.0], [np.nan]])

    def test_three_dims(self):
        with pytest.raises(DataError):
            as_feature_matrix(np.zeros((2, 2, 2)))


class TestTensorBinary:
    def test_round_trip_3x2(self, tmp_path):
        A = np.array([[1.0, -0.0], [np.pi, 1e-310], [np.inf, -7.5]])
        write_tensor_binary(tmp_path / "a.xft", A)
        B = read_tensor_binary(tmp_path / "a.xft")
        assert B.shape == A.shape and B.dtype == A.dtype
        assert A.tobytes() == B.tobytes()

    def test_header_layout(self, tmp_path):
        write_tensor_binary(tmp_path / "a.xft", np.zeros((3, 2), dtype=np.uint8))
        raw = (tmp_path / "a.xft").read_bytes()
        assert raw[:4] == b"XFT1"
        assert raw[4:6] == bytes([2, 2])
        assert struct.unpack("<2Q", raw[6:22]) == (3, 2)
        assert len(raw) == 22 + 6

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.xft"
        p.write_bytes(b"XFT1" + bytes([1, 2]) + struct.pack("<2Q", 4, 4) + np.zeros(15).tobytes())
        with pytest.raises(TruncatedPayloadError, match="15 values"):
            read_tensor_binary(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "t.xft"
        p.write_bytes(b"XFT1" + bytes([1, 3]) + b"\x00" * 10)
        with pytest.raises(TruncatedPayloadError):
            read_tensor_binary(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.xft"
        p.write_bytes(b"XXXX" + bytes([1, 0]) + np.zeros(1).tobytes())
        with pytest.raises(BadMagicError):
            read_tensor_binary(p)

    def test_unsupported_dtype_code(self, tmp_path):
        p = tmp_path / "d.xft"
        p.write_bytes(b"XFT1" + bytes([9, 1]) + struct.pack("<Q", 1) + b"\x00" * 8)
        with pytest.raises(UnsupportedDtypeError):
            read_tensor_binary(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "x.xft"
        write_tensor_binary(p, np.zeros(2))
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            read_tensor_binary(p)

    def test_unwritable_dtype(self, tmp_path):
        with pytest.raises(UnsupportedDtypeError):
            write_tensor_binary(tmp_path / "c.xft", np.zeros(2, dtype=np.complex128))

    def test_errors_are_distinct(self):
        kinds = {BadMagicError, TruncatedPayloadError, UnsupportedDtypeError}
        assert all(issubclass(k, DataError) for k in kinds)
        assert len({k.__name__ for k in kinds}) == 3

    @settings(max_examples=60, deadline=None)
    @given(
        hnp.arrays(
            dtype=st.sampled_from([np.float32, np.float64, np.uint8, np.int64]),
            shape=hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5),
        )
    )
    def test_round_trip_bit_exact(self, tmp_path_factory, A):
        p = tmp_path_factory.mktemp("xft") / "a.xft"
        write_tensor_binary(p, A)
        B = read_tensor_binary(p)
        assert B.shape == A.shape
        assert B.dtype == A.dtype
        assert B.tobytes() == np.ascontiguousarray(A).tobytes()

    def test_big_endian_input_stored_little_endian(self, tmp_path):
        A = np.arange(6, dtype=">f8").reshape(2, 3)
        write_tensor_binary(tmp_path / "b.xft", A)
        np.testing.assert_array_equal(read_tensor_binary(tmp_path / "b.xft"), A)

    def test_csv_and_binary_agree(self, tmp_path, rng):
        F = rng.standard_normal((5, 4))
        write_feature_csv(tmp_path / "f.csv", F)
        write_tensor_binary(tmp_path / "f.xft", F)
        a = read_features(tmp_path / "f.csv")
        b = read_features(tmp_path / "f.xft")
        np.testing.assert_array_max_ulp(a, b, maxulp=1)

    def test_float32_csv_within_one_ulp(self, tmp_path, rng):
        F = rng.standard_normal((5, 2)).astype(np.float32)
        write_feature_csv(tmp_path / "f.csv", F)
        a = read_features(tmp_path / "f.csv").astype(np.float32)
        np.testing.assert_array_max_ulp(a, F, maxulp=1)


class TestLabels:
    def test_contiguous(self, tmp_path):
        lv = read_labels(write(tmp_path, "y.txt", "0\n1\n0\n1"))
        np.testing.assert_array_equal(lv.labels, [0, 1, 0, 1])
        assert lv.n_classes == 2 and lv.mapping is None

    def test_remap(self, tmp_path):
        lv = read_labels(write(tmp_path, "y.txt", "5\n9\n5\n"))
        np.testing.assert_array_equal(lv.labels, [0, 1, 0])
        assert lv.n_classes == 2
        assert lv.mapping == {5: 0, 9: 1}

    @pytest.mark.parametrize("text", ["-1", "0\n1.5\n", "a\n"])
    def test_bad_tokens(self, tmp_path, text):
        with pytest.raises(ParseError):
            read_labels(write(tmp_path, "y.txt", text))

    def test_empty(self, tmp_path):
        with pytest.raises(FormatError):
            read_labels(write(tmp_path, "y.txt", "\n"))

    @given(st.lists(st.integers(0, 50), min_size=1, max_size=40))
    def test_classes_are_contiguous(self, values):
        lv = LabelVector.from_values(np.array(values))
        assert sorted(set(lv.labels.tolist())) == list(range(lv.n_classes))
        if lv.mapping is not None:
            assert [lv.mapping[v] for v in values] == lv.labels.tolist()

    def test_write_read(self, tmp_path):
        write_labels(tmp_path / "y.txt", [2, 0, 1])
        np.testing.assert_array_equal(read_labels(tmp_path / "y.txt").labels, [2, 0, 1])

    def test_float_labels_must_be_integral(self):
        with pytest.raises(DataError):
            LabelVector.from_values(np.array([0.0, 0.5]))


class TestImages:
    def test_gray_gets_channel_axis(self):
        assert as_image_set(np.zeros((2, 3, 4))).shape == (2, 3, 4, 1)

    def test_rejects_two_channels(self):
        with pytest.raises(DataError):
            as_image_set(np.zeros((2, 3, 4, 2)))

    def test_rejects_nan(self):
        imgs = np.zeros((2, 2, 2))
        imgs[0, 0, 0] = np.nan
        with pytest.raises(DataError):
            as_image_set(imgs)

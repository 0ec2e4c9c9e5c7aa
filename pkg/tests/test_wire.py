import base64

import numpy as np
import pytest

from interseg.wire import (
    WireError,
    decode_image_b64,
    decode_mask_b64,
    encode_image_b64,
    encode_mask_b64,
    labels_from_png_bytes,
    png_bytes_from_labels,
)


def test_mask_roundtrip_exact():
    rng = np.random.default_rng(0)
    marks = rng.integers(0, 4, size=(33, 47))
    back = decode_mask_b64(encode_mask_b64(marks))
    np.testing.assert_array_equal(back, marks)
    assert back.dtype == np.int64


def test_mask_full_value_range():
    marks = np.arange(256).reshape(16, 16)
    np.testing.assert_array_equal(decode_mask_b64(encode_mask_b64(marks)), marks)


def test_mask_rejects_wide_values():
    with pytest.raises(WireError):
        png_bytes_from_labels(np.full((4, 4), 300))
    with pytest.raises(WireError):
        png_bytes_from_labels(np.zeros((4, 4, 3), dtype=np.uint8))


def test_bad_base64_and_bad_png():
    with pytest.raises(WireError):
        decode_mask_b64("!!!not base64!!!")
    junk = base64.b64encode(b"definitely not a png").decode()
    with pytest.raises(WireError):
        decode_mask_b64(junk)
    with pytest.raises(WireError):
        labels_from_png_bytes(b"\x89PNG\r\n\x1a\n broken")


def test_image_roundtrip_8bit():
    arr = np.linspace(0, 200, 64, dtype=np.float32).reshape(8, 8)
    back = decode_image_b64(encode_image_b64(arr))
    assert back.shape == (8, 8)
    assert back.dtype == np.float32
    # 8-bit quantization: monotone and full range preserved
    assert back.min() == 0 and back.max() == 255


def test_image_16bit_png_decodes_raw_values():
    import io

    from PIL import Image

    arr = (np.arange(64, dtype=np.uint16) * 500).reshape(8, 8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")  # uint16 -> 16-bit grayscale
    b64 = base64.b64encode(buf.getvalue()).decode()
    back = decode_image_b64(b64)
    np.testing.assert_array_equal(back, arr.astype(np.float32))


def test_rgb_image_converted_to_grayscale():
    import io

    from PIL import Image

    arr = np.zeros((8, 8, 3), dtype=np.uint8)
    arr[..., 0] = arr[..., 1] = arr[..., 2] = 77
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    back = decode_image_b64(base64.b64encode(buf.getvalue()).decode())
    assert back.shape == (8, 8)
    np.testing.assert_array_equal(back, np.full((8, 8), 77, dtype=np.float32))

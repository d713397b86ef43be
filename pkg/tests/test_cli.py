import numpy as np
import pytest

from revmark import cli, harness
from revmark.errors import BadParams, LengthMismatch
from revmark.iflow import load_checkpoint, save_checkpoint


def test_bits_hex_roundtrip(tmp_path):
    bits = cli.parse_bits("a5", 8)
    assert bits.tolist() == [1, 0, 1, 0, 0, 1, 0, 1]
    assert cli.bits_to_hex(bits) == "a5"
    assert cli.parse_bits("0xA5", 8).tolist() == bits.tolist()
    f = tmp_path / "b.txt"
    f.write_text("1010\n0101\n")
    assert cli.parse_bits(str(f), 8).tolist() == [1, 0, 1, 0, 0, 1, 0, 1]
    with pytest.raises(LengthMismatch):
        cli.parse_bits("a5", 16)
    with pytest.raises(BadParams):
        cli.parse_bits("xyz", 8)
    f.write_text("102")
    with pytest.raises(BadParams):
        cli.parse_bits(str(f), 3)


@pytest.fixture(scope="module")
def model_file(trained64, tmp_path_factory):
    path = tmp_path_factory.mktemp("m") / "model.iiwn"
    save_checkpoint(trained64[0], path)
    return path


def test_embed_extract_recover(model_file, trained64, tmp_path, capsys):
    cover = trained64[1][0]
    harness.save_image(tmp_path / "cover.png", cover)
    hexbits = "0123456789abcdef"
    assert cli.main(["embed", "--model", str(model_file), "--in", str(tmp_path / "cover.png"),
                     "--bits", hexbits, "--out", str(tmp_path / "stego.png")]) == 0
    assert "aux_bits" in capsys.readouterr().out
    assert cli.main(["extract", "--model", str(model_file), "--in", str(tmp_path / "stego.png")]) == 0
    assert capsys.readouterr().out.strip() == hexbits
    assert cli.main(["recover", "--model", str(model_file), "--in", str(tmp_path / "stego.png"),
                     "--out-cover", str(tmp_path / "rec.png"), "--out-bits", str(tmp_path / "bits.txt")]) == 0
    assert capsys.readouterr().out.strip() == hexbits
    assert np.array_equal(harness.load_image(tmp_path / "rec.png"), cover)
    assert cli.parse_bits(str(tmp_path / "bits.txt"), 64).tolist() == cli.parse_bits(hexbits, 64).tolist()


def test_eval_writes_csv(model_file, trained64, tmp_path, capsys):
    d = tmp_path / "imgs"
    d.mkdir()
    harness.save_image(d / "a.png", trained64[1][1])
    out = tmp_path / "sweep.csv"
    assert cli.main(["eval", "--model", str(model_file), "--dir", str(d), "--noise", "id,gn:0.01",
                     "--csv", str(out), "--seed", "4"]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3 and lines[1].startswith("a.png,id,1.000000")


def test_errors_exit_one(model_file, trained64, tmp_path, capsys):
    harness.save_image(tmp_path / "cover.png", trained64[1][0])
    rc = cli.main(["embed", "--model", str(model_file), "--in", str(tmp_path / "cover.png"),
                   "--bits", "ff", "--out", str(tmp_path / "s.png")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("LengthMismatch: ")
    rc = cli.main(["extract", "--model", str(tmp_path / "missing"), "--in", str(tmp_path / "cover.png")])
    assert rc == 1 and capsys.readouterr().err.strip()
    tampered = harness.load_image(tmp_path / "cover.png")
    harness.save_image(tmp_path / "t.png", tampered)
    rc = cli.main(["recover", "--model", str(model_file), "--in", str(tmp_path / "t.png"),
                   "--out-cover", str(tmp_path / "c.png"), "--out-bits", str(tmp_path / "b.txt")])
    assert rc == 1 and ": " in capsys.readouterr().err


def test_train_command(tmp_path, capsys):
    cfg = tmp_path / "toy.cfg"
    out = tmp_path / "m.iiwn"
    cfg.write_text(f"size = 16\nmap_side = 4\nlayers = 1\nn_feat = 4\nepochs = 2\nbatch_size = 2\n"
                   f"n_images = 4\npool = jpeg:50\nout = {out}\nmetrics = {tmp_path / 'm.csv'}\n")
    assert cli.main(["train", "--config", str(cfg), "--seed", "3"]) == 0
    assert "epoch 2" in capsys.readouterr().out
    assert load_checkpoint(out).geometry.map_side == 4
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0].startswith("epoch,L_s,L_p,L_z,L_w,total,acc,psnr,lambda_w") and len(rows) == 3
    cfg.write_text("size 16\n")
    assert cli.main(["train", "--config", str(cfg)]) == 1
    assert capsys.readouterr().err.startswith("BadParams: ")

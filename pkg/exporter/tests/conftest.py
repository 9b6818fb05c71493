import string

import pytest

torch = pytest.importorskip("torch")
transformers = pytest.importorskip("transformers")


@pytest.fixture(scope="session")
def local_model_dir(tmp_path_factory):
    """A small decoder-only model saved locally: GPT-2 architecture with
    seeded random weights and a character-level tokenizer, loadable through
    the standard from_pretrained path without network access."""
    from tokenizers import Regex, Tokenizer
    from tokenizers.models import WordLevel
    from tokenizers.pre_tokenizers import Split
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    out = tmp_path_factory.mktemp("tiny-gpt2")

    chars = list(string.printable)
    vocab = {"[UNK]": 0, "[PAD]": 1, "[EOS]": 2}
    for ch in chars:
        vocab.setdefault(ch, len(vocab))
    tok = Tokenizer(WordLevel(vocab, unk_token="[UNK]"))
    tok.pre_tokenizer = Split(Regex(r"[\s\S]"), behavior="isolated")
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="[UNK]",
                                   pad_token="[PAD]", eos_token="[EOS]")
    fast.save_pretrained(out)

    torch.manual_seed(7)
    config = GPT2Config(vocab_size=len(vocab), n_embd=32, n_layer=4, n_head=2,
                        n_positions=512, bos_token_id=2, eos_token_id=2)
    model = GPT2LMHeadModel(config)
    model.save_pretrained(out)
    return str(out)


@pytest.fixture()
def prompts_file(tmp_path):
    path = tmp_path / "prompts.txt"
    path.write_text(
        "the quick brown fox\tz\n"
        "hello world\ty\n"
        "a b c d e\tf\n",
        encoding="utf-8",
    )
    return str(path)

from typing import Any, List, Sequence


def u_batchify(input: Sequence[Any], batch_size: int) -> List[Sequence[Any]]:
    l = len(input)
    output = []
    for i in range(0, l, batch_size):
        output.append(input[i : min(i + batch_size, l)])
    return output


def u_shards(count: int, workers: int) -> List[range]:
    """Contiguous index ranges, one per worker, in order"""
    workers = max(1, min(workers, count)) if count else 1
    bounds = [count * w // workers for w in range(workers + 1)]
    return [range(bounds[w], bounds[w + 1]) for w in range(workers)]


def u_error_percent(predictions: Sequence[int], labels: Sequence[int]) -> float:
    if len(labels) == 0:
        return 0.0
    wrong = sum(int(p) != int(y) for p, y in zip(predictions, labels))
    return 100.0 * wrong / len(labels)

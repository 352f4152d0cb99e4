"""Train a tiny torch model on one proportion-labeled bag via the bridge.

Twenty plain-SGD steps on a three-instance toy bag with target proportion
1/3; the loss must fall at every step.
"""

import torch

from countsup_bindings.torch_adapter import count_loss


def run(steps: int = 20, lr: float = 0.05, seed: int = 0):
    torch.manual_seed(seed)
    features = torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    model = torch.nn.Linear(2, 1)
    optimizer = torch.optim.SGD(model.parameters(), lr=lr)

    def bag_loss():
        probs = torch.sigmoid(model(features).squeeze(1))
        return count_loss(probs, "llp", label=1.0 / 3.0)

    def evaluate():
        with torch.no_grad():
            return float(bag_loss())

    losses = [evaluate()]
    for _ in range(steps):
        optimizer.zero_grad()
        loss = bag_loss()
        loss.backward()
        optimizer.step()
        losses.append(evaluate())
    return losses


if __name__ == "__main__":
    losses = run()
    print(f"initial  llp loss {losses[0]:.6f}")
    for i, value in enumerate(losses[1:], start=1):
        print(f"step {i:2d}  llp loss {value:.6f}")
    drops = all(b < a for a, b in zip(losses, losses[1:]))
    print("monotone decrease:", drops)

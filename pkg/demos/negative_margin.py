"""Shape of the penalty on negative pairs as the distance r approaches tau."""
import numpy as np

from hmimvc.objective import negative_from_distance, negative_slope

tau = 3.0
r = np.linspace(0, 4, 17)
for ri, v, s in zip(r, negative_from_distance(r, tau), negative_slope(r, tau)):
    print(f"r={ri:4.2f}  loss={v:7.4f}  slope={s:8.4f}")

# the penalty peaks at tau/3 with height 4 tau^2 / 27
fine = np.linspace(0, tau, 30001)
i = np.argmax(negative_from_distance(fine, tau))
print("peak at", fine[i], "height", negative_from_distance(fine[i], tau), "expected", 4 * tau ** 2 / 27)
print("zero from tau on:", negative_from_distance(np.array([tau, tau + 1]), tau))
